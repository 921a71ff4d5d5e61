"""Every positive verdict in the whole suite is replayed through the
independent rule checker; a replay failure aborts the test that caused it."""
from __future__ import annotations

import protassert.engine as engine

engine.REPLAY_CHECK = True
