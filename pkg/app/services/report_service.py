import csv
import io
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

from app.schemas import EvalReport, LossReport, MethodRow  # noqa: E402

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ["method", "G(x) rank", "e(..)(x) rank", "compliance", "recovery"]
GRID_PAD = 1


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """C x H x W in [-1, 1] -> H x W x 3 uint8"""
    image = np.asarray(image, dtype=np.float32)
    if image.shape[0] == 1:
        image = np.repeat(image, 3, axis=0)
    scaled = np.clip((image + 1.0) * 127.5, 0, 255).round().astype(np.uint8)
    return np.transpose(scaled, (1, 2, 0))


class ReportService:
    """Delimited tables, loss curves and image grids"""

    def table_text(self, rows: Sequence[MethodRow]) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS)
        for row in rows:
            writer.writerow([row.method, _cell(row.g_rank), _cell(row.e_rank), _cell(row.compliance), _cell(row.recovery)])
        return buffer.getvalue()

    def write_table(self, rows: Sequence[MethodRow], path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.table_text(rows).encode("utf-8"))
        return path

    def write_loss_series(self, report: LossReport, path: Path) -> Path:
        """(step, term, value) rows"""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["step", "term", "value"])
        for step, term, value in report.to_rows():
            writer.writerow([step, term, repr(value)])
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(buffer.getvalue().encode("utf-8"))
        return path

    def read_loss_series(self, path: Path, name: Optional[str] = None) -> LossReport:
        by_step: Dict[int, Dict[str, float]] = {}
        with open(path, "r", encoding="utf-8", newline="") as fh:
            for record in csv.DictReader(fh):
                by_step.setdefault(int(record["step"]), {})[record["term"]] = float(record["value"])
        report = LossReport(name=name or path.stem)
        for step in sorted(by_step):
            report.append(step, by_step[step])
        return report

    def plot_losses(self, report: LossReport, path: Path, window: int = 100) -> Path:
        fig, ax = plt.subplots(figsize=(8, 4.5))
        for term in sorted(report.series):
            ax.plot(report.steps, report.moving_average(term, window), label=term, linewidth=1.0)
        ax.set_xlabel("step")
        ax.set_ylabel(f"moving average ({window} steps)")
        ax.set_title(report.name)
        ax.legend(loc="upper right", fontsize="small")
        fig.tight_layout()
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=100, metadata={"Software": None})
        plt.close(fig)
        return path

    def image_grid(self, rows: Sequence[Sequence[np.ndarray]]) -> Image.Image:
        """One row per sample: input | G(x) | e(c(G(x))) | ground truth"""
        if not rows or not rows[0]:
            raise ValueError("Image grid needs at least one image")
        size = to_uint8(rows[0][0]).shape[0]
        cols = max(len(r) for r in rows)
        cell = size + GRID_PAD
        canvas = np.full((len(rows) * cell + GRID_PAD, cols * cell + GRID_PAD, 3), 255, dtype=np.uint8)
        for i, row in enumerate(rows):
            for j, image in enumerate(row):
                top, left = GRID_PAD + i * cell, GRID_PAD + j * cell
                canvas[top:top + size, left:left + size] = to_uint8(image)
        return Image.fromarray(canvas)

    def save_grid(self, rows: Sequence[Sequence[np.ndarray]], path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        self.image_grid(rows).save(path, format="PNG", optimize=False)
        return path

    def emit_report(
        self,
        report: EvalReport,
        loss_reports: Sequence[LossReport],
        out_dir: Path,
        grids: Optional[Dict[str, Sequence[Sequence[np.ndarray]]]] = None,
    ) -> List[Path]:
        """
        Writes the method table and the full evaluation report; loss series,
        curves and grids only when there is something to draw.
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = [self.write_table(report.rows, out_dir / "table.csv")]
        eval_path = out_dir / "eval_report.json"
        eval_path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
        files.append(eval_path)

        for loss in loss_reports:
            if not loss.steps:
                continue
            files.append(self.write_loss_series(loss, out_dir / f"losses_{loss.name}.csv"))
            files.append(self.plot_losses(loss, out_dir / f"losses_{loss.name}.png"))
        for name, rows in sorted((grids or {}).items()):
            if rows:
                files.append(self.save_grid(rows, out_dir / f"grid_{name}.png"))
        logger.info(f"Report written to {out_dir} ({len(files)} files)")
        return files


# Singleton instance
report_service = ReportService()
