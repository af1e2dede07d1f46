"""Room size and low-frequency modal estimation from a few impulse responses."""

__version__ = "0.1.0"

from .bandsplit import analytic_signal, band_split
from .dictionaries import (
    SphereDictionary,
    TemporalDictionary,
    build_group_candidates,
    build_temporal_dictionary,
    sample_sphere,
    spatio_temporal_atom,
)
from .estimator import (
    EstimationConfig,
    EstimationReport,
    MissingAxialModeError,
    ModeEstimate,
    estimate_room_and_modes,
    least_squares_coefficients,
    reconstruct,
    recover_room_size,
)
from .metrics import evaluate, kspace_deviation, pearson_pcc, snr_db
from .modal import (
    ModeIndex,
    RoomGeometry,
    WaveNumber,
    WaveVectorGroup,
    band_to_room_range,
    eigenfrequency,
    enumerate_modes_below,
    mode_count_estimate,
    spatial_step_bound,
    wave_vector_group,
)
from .synthesis import (
    MeasurementSet,
    ModalModel,
    build_measurement_set,
    make_rigid_wall_model,
    sample_microphones,
    synthesize_rir,
)
