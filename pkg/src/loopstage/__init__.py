"""loopstage: lockstep sessions for humans and RL agents in shared episodes."""

__version__ = "0.1.0"

BUILD_ID = f"loopstage-{__version__}"
