from .exporter import ExportSpec, ExportSummary, HookFailure, ShapeDrift, export, write_stream_container  # noqa: F401
