"""Integer codes shared by the session kernels and the engine."""

STRATEGY_MEMORY = 0
STRATEGY_SIMULTANEOUS = 1

BASIS_ROUND_ROBIN = 0
BASIS_FIXED = 1

OUT_COINCIDENCE = 0
OUT_IDLER_LOSS = 1
OUT_PBS_REJECT = 2
OUT_TIMEOUT = 3
OUT_SESSION_END = 4

OUTCOME_NAMES = ("four_fold_coincidence", "idler_loss", "pbs_reject", "qm2_timeout", "session_end")

# pattern column for non-coincidence records; HELD marks a session end that
# interrupted a round with an excitation stored in QM1
PATTERN_NONE = -1
PATTERN_HELD = -2
