import plotly.graph_objects as go

from intersnap_archive.metrics import metric_tables


colours = ["#E69F00", "#56B4E9", "#009E73", "#F0E442", "#0072B2", "#D55E00", "#CC79A7"]
colour_max = len(colours)


def _layout(fig, x_title, y_title):
    fig.update_xaxes(title_text=x_title)
    fig.update_yaxes(title_text=y_title)
    fig.update_layout(width=600, height=500,
                      margin=dict(l=20, r=20, t=20, b=20),
                      legend=dict(x=0.02, y=1, yanchor="top"),
                      showlegend=True)
    fig.layout.template = "simple_white"
    return fig


def plot_by_network(df, x, y, x_title, y_title, mode="markers"):
    """One trace per network

    Args:
        df (pandas.DataFrame): Table with a network_id column
        x (str): Column for the x axis
        y (str): Column for the y axis
        x_title (str): x-axis title
        y_title (str): y-axis title
        mode (str, optional): "markers" or "lines". Defaults to "markers".

    Returns:
        plotly.graph_objects.Figure: Figure object
    """

    fig = go.Figure()

    for i, (nid, group) in enumerate(df.groupby("network_id", sort=True)):
        colour = colours[i % colour_max]
        fig.add_trace(
            go.Scatter(
                mode=mode,
                marker=dict(color=colour, size=5, symbol="cross"),
                line=dict(color=colour, width=2),
                name=nid,
                x=group[x].to_numpy(dtype=float, na_value=float("nan")),
                y=group[y].to_numpy(dtype=float, na_value=float("nan")),
            )
        )

    return _layout(fig, x_title, y_title)


def plot_snapshot_latency(report):
    """Snapshot latency against the number of archived transactions"""
    df = metric_tables(report)["snapshot_latency.csv"]
    return plot_by_network(df, "archived_transactions", "total_s",
                           "archived transactions", "snapshot latency (s)")


def plot_snapshot_throughput(report):
    """Snapshots per minute of wall-clock time against ledger height"""
    df = metric_tables(report)["snapshot_throughput.csv"]
    return plot_by_network(df, "ledger_height", "snapshots_per_min_wall",
                           "ledger height (blocks)", "snapshots per minute", mode="lines+markers")


def plot_stage_counts(report):
    """Passed and failed attempts of each pipeline stage"""

    df = report.stage_table()
    fig = go.Figure()
    fig.add_trace(go.Bar(name="passed", x=df["stage"], y=df["passed"], marker_color=colours[2]))
    fig.add_trace(go.Bar(name="failed", x=df["stage"], y=df["failed"], marker_color=colours[5]))
    fig.update_layout(barmode="stack")
    return _layout(fig, "stage", "attempts")


def write_figures(report, out_path):
    """Write the latency, throughput and stage figures as standalone HTML files

    Returns:
        list: Paths written
    """

    figures = {"snapshot_latency.html": plot_snapshot_latency(report),
               "snapshot_throughput.html": plot_snapshot_throughput(report),
               "stage_counts.html": plot_stage_counts(report)}

    out_path.mkdir(parents=True, exist_ok=True)
    written = []
    for filename, fig in figures.items():
        fig.write_html(out_path / filename, include_plotlyjs="cdn")
        written.append(out_path / filename)
    return written
