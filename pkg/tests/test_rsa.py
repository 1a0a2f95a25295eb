import random
from collections import Counter

import pytest

from cachelab.cache import CacheConfig, addr_to_set
from cachelab.rsa import (ExponentiationTiming, MultiplierTable, decrypt_crt,
                          encrypt, keygen, mod_exp_fixed_window,
                          mod_exp_scatter_gather, window_decompose)
from cachelab.trace import TraceRecorder, finish_trace


def naive_square_and_multiply(a, e, n):
    """Independent oracle: plain left-to-right binary exponentiation."""
    result = 1
    for bit in bin(e)[2:]:
        result = result * result % n
        if bit == "1":
            result = result * a % n
    return result


# --- window decomposition ------------------------------------------------------

def test_window_decompose_hex_digits():
    assert window_decompose(0xB4, 4).windows == (0xB, 0x4)


def test_window_decompose_single_window():
    assert window_decompose(1, 4).windows == (1,)


def test_window_decompose_all_ones():
    seq = window_decompose((1 << 1024) - 1, 4)
    assert len(seq.windows) == 256
    assert set(seq.windows) == {0xF}
    assert seq.reassemble() == (1 << 1024) - 1


def test_window_decompose_rejects_zero():
    with pytest.raises(ValueError):
        window_decompose(0, 4)
    with pytest.raises(ValueError):
        window_decompose(5, 0)


def test_window_roundtrip_random():
    rng = random.Random(3)
    for _ in range(300):
        e = rng.randrange(1, 1 << 1024)
        k = rng.randint(1, 8)
        assert window_decompose(e, k).reassemble() == e


# --- fixed-window exponentiation -----------------------------------------------

def test_mod_exp_small_example():
    assert mod_exp_fixed_window(2, 5, 33, k=2) == 32
    assert pow(2, 5, 33) == 32


def test_mod_exp_matches_naive_oracle():
    rng = random.Random(9)
    for _ in range(400):
        n = rng.randrange(3, 1 << 64) | 1
        a = rng.randrange(1, n)
        e = rng.randrange(1, 1 << 64)
        expected = naive_square_and_multiply(a, e, n)
        assert mod_exp_fixed_window(a, e, n, k=4) == expected
        assert mod_exp_scatter_gather(a, e, n, k=4) == expected


def test_mod_exp_rejects_bad_domain():
    with pytest.raises(ValueError):
        mod_exp_fixed_window(0, 3, 15)
    with pytest.raises(ValueError):
        mod_exp_fixed_window(20, 3, 15)
    with pytest.raises(ValueError):
        mod_exp_fixed_window(2, 0, 15)


def entry_reads(trace, table):
    """Table-read events grouped into (entry, [events]) bursts, trace order."""
    lo = table.base_address
    hi = lo + table.table_bytes
    bursts = []
    for ev in trace.events:
        if not lo <= ev.address < hi:
            continue
        entry = (ev.address - lo) // table.entry_size_bytes + 1
        if bursts and bursts[-1][0] == entry and ev.ground_truth_label == bursts[-1][1][-1].ground_truth_label:
            bursts[-1][1].append(ev)
        else:
            bursts.append((entry, [ev]))
    return bursts


def test_trace_follows_nonzero_windows():
    # windows [3, 0, 7]: a burst for g[3], a silent window, a burst for g[7]
    e = (3 << 8) | 7
    assert window_decompose(e, 4).windows == (3, 0, 7)
    table = MultiplierTable(num_entries=16)
    tracer = TraceRecorder()
    mod_exp_fixed_window(5, e, 1000003, k=4, tracer=tracer, table=table)
    trace = finish_trace(tracer)
    bursts = entry_reads(trace, table)
    assert [entry for entry, _ in bursts] == [3, 7]
    for entry, events in bursts:
        lo, hi = table.entry_byte_range(entry)
        addresses = [ev.address for ev in events]
        assert len(events) == table.words_per_entry == 16
        assert addresses == sorted(addresses)
        assert all(lo <= a < hi for a in addresses)
    # the zero window leaves a full iteration gap between the bursts
    iteration = ExponentiationTiming().iteration_cycles(4)
    assert bursts[1][1][0].cycle - bursts[0][1][0].cycle == 2 * iteration


def test_trace_sequence_equals_nonzero_window_sequence():
    rng = random.Random(21)
    table = MultiplierTable(num_entries=16)
    for _ in range(25):
        e = rng.randrange(1, 1 << 96)
        tracer = TraceRecorder()
        mod_exp_fixed_window(7, e, (1 << 127) - 1, k=4, tracer=tracer, table=table)
        got = [entry for entry, _ in entry_reads(finish_trace(tracer), table)]
        expected = [w for w in window_decompose(e, 4).windows if w]
        assert got == expected


def test_trace_base_one_touches_only_window_entries():
    e = 0x305
    table = MultiplierTable(num_entries=16)
    tracer = TraceRecorder()
    assert mod_exp_fixed_window(1, e, 17, k=4, tracer=tracer, table=table) == 1
    entries = {entry for entry, _ in entry_reads(finish_trace(tracer), table)}
    assert entries == {3, 5}


def test_trace_stamps_non_decreasing():
    tracer = TraceRecorder()
    mod_exp_fixed_window(3, 0xABCDE, 104729, k=4, tracer=tracer)
    stamps = [ev.cycle for ev in tracer.events]
    assert stamps == sorted(stamps)


def test_each_window_occupies_one_epoch():
    # one iteration spans exactly probes_per_epoch * probe_period cycles
    timing = ExponentiationTiming()
    assert timing.iteration_cycles(4) == 33 * 500
    e = 0x1234
    tracer = TraceRecorder()
    mod_exp_fixed_window(3, e, 104729, k=4, tracer=tracer, timing=timing)
    trace = finish_trace(tracer)
    assert trace.duration_cycles == len(window_decompose(e, 4).windows) * 16500


def test_table_reads_are_probe_separated():
    # consecutive word reads of one entry land in distinct probe intervals
    table = MultiplierTable(num_entries=16)
    tracer = TraceRecorder()
    mod_exp_fixed_window(9, 0xF, 104729, k=4, tracer=tracer, table=table)
    reads = [ev for ev in tracer.events
             if table.base_address <= ev.address < table.base_address + table.table_bytes]
    intervals = [ev.cycle // 500 for ev in reads]
    assert len(set(intervals)) == len(intervals)


# --- scatter-gather hardening ----------------------------------------------------

def test_scatter_gather_touches_every_line_once_per_gather():
    cfg = CacheConfig()
    table = MultiplierTable(num_entries=16)
    tracer = TraceRecorder()
    mod_exp_scatter_gather(5, 0xA07, 1000003, k=4, tracer=tracer, table=table)
    trace = finish_trace(tracer)
    lines = set(table.line_addresses(cfg))
    windows = window_decompose(0xA07, 4).windows
    per_gather = {}
    for ev in trace.events:
        if ev.address in lines:
            per_gather.setdefault(ev.ground_truth_label, []).append(ev.address)
    assert set(per_gather) == set(range(len(windows)))
    for touched in per_gather.values():
        assert sorted(touched) == sorted(lines)
        assert len(set(touched)) == len(touched)


def iteration_set_footprints(trace, cfg):
    """Multiset of per-iteration touched-set frozensets."""
    iteration = ExponentiationTiming().iteration_cycles(4)
    per_iter = {}
    for ev in trace.events:
        per_iter.setdefault(ev.cycle // iteration, set()).add(addr_to_set(ev.address, cfg))
    return Counter(frozenset(s) for s in per_iter.values())


def test_scatter_gather_footprint_independent_of_exponent():
    # equal window counts, arbitrary values: identical per-iteration footprints
    cfg = CacheConfig()
    rng = random.Random(5)
    for _ in range(10):
        bits = rng.randrange(16, 64)
        e1 = rng.randrange(1 << bits, 1 << (bits + 1))
        e2 = rng.randrange(1 << bits, 1 << (bits + 1))
        traces = []
        for e in (e1, e2):
            tracer = TraceRecorder()
            mod_exp_scatter_gather(3, e, (1 << 61) - 1, k=4, tracer=tracer)
            traces.append(finish_trace(tracer))
        assert iteration_set_footprints(traces[0], cfg) == iteration_set_footprints(traces[1], cfg)


def test_fixed_window_footprint_leaks_by_contrast():
    cfg = CacheConfig()
    e1, e2 = 0x111, 0xFFF
    footprints = []
    for e in (e1, e2):
        tracer = TraceRecorder()
        mod_exp_fixed_window(3, e, (1 << 61) - 1, k=4, tracer=tracer)
        footprints.append(iteration_set_footprints(finish_trace(tracer), cfg))
    assert footprints[0] != footprints[1]


# --- CRT decryption ------------------------------------------------------------

def test_encrypt_decrypt_roundtrip_2048(key2048):
    assert decrypt_crt(encrypt(42, key2048), key2048) == 42


def test_decrypt_ciphertext_one_has_both_half_traces(key512):
    tracer = TraceRecorder()
    assert decrypt_crt(1, key512, tracer=tracer) == 1
    wp = len(window_decompose(key512.d_p, 4).windows)
    wq = len(window_decompose(key512.d_q, 4).windows)
    assert tracer.cycle == (wp + wq) * 16500


def test_decrypt_matches_non_crt_oracle(key512):
    rng = random.Random(17)
    for _ in range(10):
        c = rng.randrange(2, key512.n)
        assert decrypt_crt(c, key512) == pow(c, key512.d, key512.n)


def test_decrypt_rejects_out_of_range(key512):
    with pytest.raises(ValueError):
        decrypt_crt(0, key512)
    with pytest.raises(ValueError):
        decrypt_crt(key512.n, key512)


# --- key generation -------------------------------------------------------------

def test_keygen_deterministic():
    assert keygen(512, rng_seed=5) == keygen(512, rng_seed=5)
    assert keygen(512, rng_seed=5) != keygen(512, rng_seed=6)


def test_keygen_structure(key512):
    assert key512.n == key512.p * key512.q
    assert key512.n.bit_length() == 512
    assert key512.d_p == key512.d % (key512.p - 1)
    assert (key512.q * key512.q_inv) % key512.p == 1


def test_keygen_roundtrip_100_messages(key512):
    rng = random.Random(99)
    for _ in range(100):
        m = rng.randrange(1, key512.n)
        assert decrypt_crt(encrypt(m, key512), key512) == m


def test_keygen_rejects_unsupported_size():
    with pytest.raises(ValueError):
        keygen(768, rng_seed=0)
