import logging

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)


def plot_lines(frame, x, columns, path, title="", ylabel="", err_columns=None):
    """One line per column of `frame` against `x`, saved as PNG. Optional error bars by column name."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for col in columns:
        err = frame[err_columns[col]] if err_columns and col in err_columns else None
        if err is not None:
            ax.errorbar(frame[x], frame[col], yerr=err, marker="o", capsize=3, label=col)
        else:
            ax.plot(frame[x], frame[col], marker="o", label=col)
    ax.set_xlabel(x)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    logger.info(f"saved plot {path}")
    return path
