from .baseline import BaselineConfig, BaselineIndex, baseline_windows, build_baseline, window_count
from .harness import EvalReport, run_eval
from .needles import NeedleCase, NeedleSpec, generate_needle_corpus

__all__ = [
    "BaselineConfig", "BaselineIndex", "EvalReport", "NeedleCase", "NeedleSpec",
    "baseline_windows", "build_baseline", "generate_needle_corpus", "run_eval", "window_count",
]
