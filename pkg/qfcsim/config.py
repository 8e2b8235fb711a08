import os
import logging

log_level = os.environ.get("LOG_LEVEL", "INFO").upper()
logging.basicConfig(
    level=getattr(logging, log_level, logging.INFO),
    format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
)

SPEED_OF_LIGHT_M_S = 299_792_458.0
PS_PER_NS = 1000.0

# Parallel pulse blocks. Results do not depend on THREADS, only on BLOCK_PULSES.
THREADS = int(os.environ.get("QFCSIM_THREADS", "1"))
BLOCK_PULSES = 2**18

# Levenberg-Marquardt schedule
LM_LAMBDA_START = 1e-3
LM_LAMBDA_UP = 10.0
LM_LAMBDA_DOWN = 10.0
LM_LAMBDA_MAX = 1e12
LM_MAX_ITERATIONS = 200
LM_RTOL = 1e-10

# Emitter defaults for blinking and diffusion timescales
DEFAULT_TAU_C_NS = 1000.0
DEFAULT_TAU_BLINK_ON_NS = 200.0
DEFAULT_TAU_BLINK_OFF_NS = 22.2
DEFAULT_HOM_SEPARATION_NS = 12.5
EMITTER_WAVELENGTH_NM = 942.33

# Seed laser defaults
SEED_WAVELENGTH_NM = 2401.0
SEED_FSR_MHZ = 177.0
SEED_ENVELOPE_FWHM_GHZ = 4.0
SEED_N_MODES = 22
SEED_MODE_FLUCTUATION_NS = 1000.0
SEED_MODE_CONCENTRATION = 0.9

# Noise photons are generated per 1 ms interval
NOISE_INTERVAL_PS = 1e9

# Detector defaults (SNSPD); jitter/dead time/dark rate are typical values
NIR_DETECTOR_EFFICIENCY = 0.90
TELECOM_DETECTOR_EFFICIENCY = 0.80
DETECTOR_JITTER_PS = 20.0
DETECTOR_DEAD_TIME_PS = 30_000.0
DETECTOR_DARK_RATE_HZ = 100.0

# Analysis defaults
CORRELATION_BIN_PS = 100.0
LIFETIME_BIN_PS = 8.0
LIFETIME_SPAN_PS = 3000.0
LIFETIME_FIT_START_PS = 60.0
LIFETIME_MARGIN_PS = 200.0
N_SIDE_PEAKS = 3
SIDE_PEAK_RANGE = 6

# Event files
EVENT_CHUNK_RECORDS = 1 << 20
