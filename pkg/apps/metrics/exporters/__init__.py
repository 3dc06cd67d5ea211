"""
Evaluation report exporters using the Strategy pattern.

Demonstrates:
- Strategy pattern for different export formats
- Abstract base classes
- openpyxl workbooks for spreadsheet review
"""

from abc import ABC, abstractmethod
from io import BytesIO
from pathlib import Path
from typing import Dict, List, Optional

import openpyxl
from openpyxl.styles import Alignment, Font, PatternFill

from apps.metrics.reports import EvalReport

FLOAT_FORMAT = '{:.6f}'


def _format(value: object) -> str:
    return FLOAT_FORMAT.format(value) if isinstance(value, float) else str(value)


class ExporterBase(ABC):
    """
    Abstract base class for report export strategies.
    """

    @abstractmethod
    def export(self, report: EvalReport) -> BytesIO:
        """
        Serialize ``report``.

        Returns:
            BytesIO positioned at the start of the serialized report
        """

    @abstractmethod
    def get_file_extension(self) -> str:
        """File extension including the dot."""


class KeyValueExporter(ExporterBase):
    """Line-oriented ``key=value`` text: one block per case, then the means."""

    def get_file_extension(self) -> str:
        return '.txt'

    def export(self, report: EvalReport) -> BytesIO:
        lines: List[str] = [f'cases={len(report.cases)}']
        for row in report.rows():
            case_id = row.pop('case_id')
            lines.extend(f'case.{case_id}.{key}={_format(value)}' for key, value in row.items())
        lines.extend(f'mean.{key}={_format(value)}' for key, value in report.means().items())
        lines.append(f"flagged={','.join(report.flagged)}")
        return BytesIO(('\n'.join(lines) + '\n').encode('utf-8'))


class TableExporter(ExporterBase):
    """Tab-separated table with a header row and one row per case."""

    def get_file_extension(self) -> str:
        return '.tsv'

    def export(self, report: EvalReport) -> BytesIO:
        rows = report.rows()
        if not rows:
            return BytesIO(b'')
        header = list(rows[0])
        lines = ['\t'.join(header)]
        lines.extend('\t'.join(_format(row[key]) for key in header) for row in rows)
        return BytesIO(('\n'.join(lines) + '\n').encode('utf-8'))


class ExcelExporter(ExporterBase):
    """
    Excel workbook with a per-case sheet and a means sheet.
    """

    HEADER_FONT = Font(bold=True, color="FFFFFF")
    HEADER_FILL = PatternFill(start_color="4472C4", end_color="4472C4", fill_type="solid")

    def get_file_extension(self) -> str:
        return '.xlsx'

    def export(self, report: EvalReport) -> BytesIO:
        workbook = openpyxl.Workbook()
        if 'Sheet' in workbook.sheetnames:
            del workbook['Sheet']
        self._create_cases_sheet(workbook, report.rows())
        self._create_means_sheet(workbook, report.means())

        output = BytesIO()
        workbook.save(output)
        output.seek(0)
        return output

    def _style_header(self, ws) -> None:
        for cell in ws[1]:
            cell.font = self.HEADER_FONT
            cell.fill = self.HEADER_FILL
            cell.alignment = Alignment(horizontal='center')

    def _create_cases_sheet(self, workbook: openpyxl.Workbook, rows: List[Dict[str, object]]) -> None:
        ws = workbook.create_sheet("Cases", 0)
        if not rows:
            return
        header = list(rows[0])
        ws.append(header)
        self._style_header(ws)
        for row in rows:
            ws.append([row[key] for key in header])
        ws.column_dimensions['A'].width = 16

    def _create_means_sheet(self, workbook: openpyxl.Workbook, means: Dict[str, float]) -> None:
        ws = workbook.create_sheet("Means")
        ws.append(["Metric", "Mean"])
        self._style_header(ws)
        for key, value in means.items():
            ws.append([key, value])
        ws.column_dimensions['A'].width = 16


class ExportService:
    """
    Writes a report with the configured strategy.
    """

    def __init__(self, exporter: ExporterBase):
        self._exporter = exporter

    def write(self, report: EvalReport, directory: Path, stem: str = 'eval', name: Optional[str] = None) -> Path:
        path = Path(directory) / (name or stem + self._exporter.get_file_extension())
        path.write_bytes(self._exporter.export(report).getvalue())
        return path
