"""Human-readable formatting for run durations and iteration histories."""


def format_duration(seconds: float) -> str:
    """
    Format seconds as human-readable duration.

    Solver runs are often sub-second, so short durations get milliseconds.

    Args:
        seconds: Duration in seconds.

    Returns:
        Formatted string like "350ms", "45.2s" or "2m 5s".
    """
    if seconds < 1:
        return f"{seconds * 1000:.0f}ms"
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes = int(seconds // 60)
    secs = int(seconds % 60)
    return f"{minutes}m {secs}s"


def format_history(values: list[float], limit: int = 6) -> str:
    """
    Format a residual history for a single log line.

    Long histories keep the first two and the last entries around an ellipsis.

    Args:
        values: Residual norms in iteration order.
        limit: Maximum number of entries shown.

    Returns:
        String like "1.0e-01 -> 3.2e-04 -> ... -> 8.1e-13", or "(empty)".
    """
    if not values:
        return "(empty)"
    shown = [f"{value:.1e}" for value in values]
    if len(shown) > limit:
        shown = shown[:2] + ["..."] + shown[-(limit - 3):]
    return " -> ".join(shown)
