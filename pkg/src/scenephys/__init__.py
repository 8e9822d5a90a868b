"""Physical plausibility evaluation and refinement of indoor scene layouts."""
