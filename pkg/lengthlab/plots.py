import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from .save import _atomic_write

LENGTH_COLUMNS = ["mean_len", "min_len", "max_len"]


def plot_length_loss(data: pd.DataFrame, title: str = "Response length and loss",
                     phase_boundaries: Optional[Sequence[int]] = None,
                     logger_name: str = "lengthlab_logger") -> go.Figure:
    """
    Plot response length and policy loss against the training step.

    Args:
        data (pd.DataFrame): TrainLog frame.
        title (str): Figure title.
        phase_boundaries (list): Steps where a new phase starts, drawn as
                                 vertical lines.

    Returns:
        go.Figure: Two panels sharing the step axis.

    Raises:
        ValueError: If required columns are not present in the DataFrame.
    """
    logger = logging.getLogger(logger_name)

    # Check if required columns are present in dataframe
    for col in ["step", "policy_loss"] + LENGTH_COLUMNS:
        if col not in data.columns:
            logger.warning(f"{col} column not found in dataframe")
            raise ValueError(f"{col} column not found in dataframe")

    fig = make_subplots(rows=2, cols=1, shared_xaxes=True,
                        subplot_titles=("Response length", "Policy loss"))
    for col in LENGTH_COLUMNS:
        fig.add_trace(
            go.Scatter(x=data["step"], y=data[col], mode="lines", name=col),
            row=1,
            col=1,
        )
    fig.add_trace(
        go.Scatter(x=data["step"], y=data["policy_loss"], mode="lines",
                   name="policy_loss"),
        row=2,
        col=1,
    )
    for boundary in phase_boundaries or []:
        fig.add_vline(x=boundary, line_dash="dash")

    fig.update_yaxes(title_text="Tokens", row=1, col=1)
    fig.update_yaxes(title_text="Loss", row=2, col=1)
    fig.update_xaxes(title_text="Step", row=2, col=1)
    fig.update_layout(title=title, height=700, width=1000)
    logger.info("Length and loss figure created")
    return fig


def plot_phases(frames: Sequence[pd.DataFrame],
                title: str = "Two-phase training",
                logger_name: str = "lengthlab_logger") -> go.Figure:
    """Concatenate phase logs on one step axis and plot them."""
    parts, boundaries, offset = [], [], 0
    for frame in frames:
        shifted = frame.copy()
        shifted["step"] = shifted["step"] + offset
        parts.append(shifted)
        offset += len(frame)
        boundaries.append(offset)
    data = pd.concat(parts, ignore_index=True) if parts else pd.DataFrame()
    return plot_length_loss(data, title, boundaries[:-1], logger_name)


def write_figure(fig: go.Figure, output_dir: Union[str, Path], name: str,
                 logger_name: str = "lengthlab_logger") -> Path:
    """Write a figure as a standalone HTML file into the output directory."""
    logger = logging.getLogger(logger_name)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    output_path = output_dir / f"{name}.html"
    _atomic_write(output_path, lambda p: fig.write_html(p, include_plotlyjs=True))
    logger.info(f"Figure saved at {output_path}")
    return output_path
