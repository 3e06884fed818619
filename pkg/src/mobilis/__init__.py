"""CDR mobility analytics: ingest, trajectories, distributions, law fitting."""

__version__ = "0.1.0"

from .errors import (BadSupportError, ConfigError, DataError, DegenerateDataError,
                     MobilisError, NoDataError, OutOfSupportError, ParseError)
from .fitting import (ExponentialModel, FitResult, TruncatedPowerLawModel,
                      fit_exponential, fit_power_law_cutoff, ks_statistic, model_pdf)
from .generator import (Arena, GeneratorConfig, SyntheticTruth, TowerGrid,
                        generate_records, sample_step, sample_waiting_time,
                        write_population_csv)
from .ingest import IngestSummary, dedupe, ingest_file, ingest_stream, parse_cdr_line
from .records import CdrRecord, ObservationWindow
from .stats import (CurveFamily, Histogram, curve_family, hourly_activity_density,
                    log_edges, make_histogram, mean_inter_event_per_subscriber,
                    observed_cutoffs, population_mean)
from .store import SubscriberStore
from .trajectory import (ActivityCohort, IntervalSample, Trajectory, assign_cohorts,
                         build_trajectories, filter_samples, interval_samples,
                         radius_of_gyration)
