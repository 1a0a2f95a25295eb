"""Desk-scale laboratory for Prime+Probe cache attacks on enclave-style victims.

Subpackages: `cache` (set-associative LRU model), `rsa` and `genome`
(instrumented victims), `engine` (probe loop and campaigns), `recovery`
(window voting and microsatellite detection), `cli` (scenario runner).
"""

from .cache import (AccessResult, CacheConfig, CacheLineTag, CacheState, LruPolicy,
                    Owner, ReferenceLruCache, UnprimedSetError, addr_to_set)
from .engine import (AttackConfig, ConfigError, MonitorTarget, NoiseConfig,
                     ProbeRecord, RunObservation, dump_observations_csv,
                     epoch_slice, run_campaign, run_once)
from .genome import (GenomeSequence, HashIndexLayout, Microsatellite, build_index,
                     encode_nucleotide, kmer_index, load_genome,
                     microsatellite_cache_sets)
from .recovery import (CandidateMark, RecoveredWindows, RecoveryReport,
                       SatelliteDetection, UNKNOWN, ZERO, detect_satellite,
                       emit_figures, mark_candidates, score_key, vote_windows)
from .rsa import (ExponentiationTiming, MultiplierTable, RsaSecret, WindowSequence,
                  decrypt_crt, encrypt, keygen, mod_exp_fixed_window,
                  mod_exp_scatter_gather, window_decompose)
from .trace import AccessEvent, TraceRecorder, VictimTrace

__version__ = "0.1.0"
