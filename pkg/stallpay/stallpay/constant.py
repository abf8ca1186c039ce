# Protocol constants shared by every app.

# Rates and shares are integers in 1/10000.
BASIS_POINTS = 10000

HOUR = 3600
WEEK_HOURS = 7 * 24
WEEK = WEEK_HOURS * HOUR

# Hour index of the simulated epoch within the week. 0 means the epoch is Monday 00:00.
EPOCH_HOUR_OFFSET = 0

# Time after park_until during which the payee may still settle.
GRACE_PERIOD = 86400

# Amounts are stored in signed 64-bit database columns.
MAX_FUNDS = 2**63 - 1
MAX_TIME = 2**63 - 1

SCENARIO_VERSION = 1

# Protected to avoid a scenario spinning up a huge lot.
MAX_STALLS = 10000
