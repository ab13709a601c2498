import math
import zlib

import numpy as np
import pytest

from conftest import make_snapshot
from fieldpress.codec import (
    CompressedUpdate,
    UpdateFormatError,
    UpdateKind,
    baseline_quantize_deflate,
    compression_report,
    deserialize_update,
    serialize_update,
)
from fieldpress.neural_field import (
    NfArchitecture,
    adapter_param_count,
    init_adapter,
    init_params,
)

SMALL = NfArchitecture(hidden_dim=6, n_layers=2, ffm_dim=4, ffm_frequency=3.0)


def random_params(arch, seed):
    gen = np.random.Generator(np.random.PCG64(seed))
    params = init_params(arch, seed)
    # randomize every tensor with values that are exactly float32
    for arr in params.flat_arrays():
        arr[:] = gen.standard_normal(arr.shape).astype(np.float32)
    return params


def random_adapter(arch, rank, seed):
    gen = np.random.Generator(np.random.PCG64(seed))
    adapter = init_adapter(arch, rank, seed)
    for arr in adapter.flat_arrays():
        arr[:] = gen.standard_normal(arr.shape).astype(np.float32)
    return adapter


class TestSerializeRoundtrip:
    @pytest.mark.parametrize("kind", [UpdateKind.BASE_FULL, UpdateKind.FULL_DELTA])
    def test_full_roundtrip_bit_exact(self, kind):
        params = random_params(SMALL, seed=int(kind))
        update = serialize_update(params, kind, timestep_index=42)
        got_kind, got_ts, got = deserialize_update(update.payload)
        assert got_kind is kind and got_ts == 42
        for a, b in zip(params.flat_arrays(), got.flat_arrays()):
            assert np.array_equal(a.astype(np.float32), b)

    def test_adapter_roundtrip_bit_exact(self):
        adapter = random_adapter(SMALL, rank=2, seed=9)
        update = serialize_update(adapter, UpdateKind.LORA_PAIR, timestep_index=7)
        kind, ts, got = deserialize_update(update.payload)
        assert kind is UpdateKind.LORA_PAIR and ts == 7 and got.rank == 2
        for a, b in zip(adapter.flat_arrays(), got.flat_arrays()):
            assert np.array_equal(a.astype(np.float32), b)

    def test_nonfinite_refused(self):
        params = random_params(SMALL, 0)
        params.layers[0].weight[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            serialize_update(params, UpdateKind.BASE_FULL, 0)

    def test_wrong_payload_type_rejected(self):
        params = random_params(SMALL, 0)
        with pytest.raises(TypeError):
            serialize_update(params, UpdateKind.LORA_PAIR, 0)

    def test_corrupt_magic_rejected(self):
        update = serialize_update(random_params(SMALL, 1), UpdateKind.BASE_FULL, 0)
        with pytest.raises(UpdateFormatError):
            deserialize_update(b"XXXX" + update.payload[4:])

    def test_truncated_payload_rejected(self):
        update = serialize_update(random_params(SMALL, 1), UpdateKind.BASE_FULL, 0)
        with pytest.raises(UpdateFormatError):
            deserialize_update(update.payload[:-8])


class TestStoredSizes:
    def test_full_delta_of_default_model_is_about_1_5_mib(self):
        arch = NfArchitecture()
        params = init_params(arch, 0)
        update = serialize_update(params, UpdateKind.FULL_DELTA, 0)
        mib = update.stored_bytes / 2**20
        assert 1.4 < mib < 1.6
        assert update.param_count == arch.param_count()

    def test_lora_rank8_default_model_is_about_98_kib(self):
        arch = NfArchitecture()
        adapter = init_adapter(arch, rank=8, seed=0)
        update = serialize_update(adapter, UpdateKind.LORA_PAIR, 0)
        kib = update.stored_bytes / 1024
        assert 90 < kib < 105
        assert update.param_count == adapter_param_count(arch, 8)

    def test_lora_bytes_strictly_decrease_with_smaller_rank(self):
        arch = NfArchitecture()
        sizes = [
            serialize_update(init_adapter(arch, r, 0), UpdateKind.LORA_PAIR, 0).stored_bytes
            for r in (64, 32, 16, 8)
        ]
        assert sizes == sorted(sizes, reverse=True)
        assert len(set(sizes)) == len(sizes)


def fixed_update(kind, stored, timestep=0, params=1000):
    return CompressedUpdate(
        kind=kind, timestep_index=timestep, payload=b"x" * stored, param_count=params
    )


class TestCompressionReport:
    def test_dense_uniform_sizes(self):
        # raw 17 MiB vs 392 KiB per stored snapshot at full retention
        raw = 17 * 2**20
        stored = 392 * 1024
        updates = [fixed_update(UpdateKind.LORA_PAIR, stored, t) for t in range(10)]
        rep = compression_report(raw, updates, total_snapshots=10, retained=10)
        assert rep.sc == pytest.approx(raw / stored)
        assert rep.sc == pytest.approx(44.4, abs=0.5)  # about 47x territory
        assert rep.tc_naive == pytest.approx(rep.sc / rep.tr)

    def test_partial_retention_naive_vs_amortized(self):
        raw = 17 * 2**20
        stored = 392 * 1024
        total, retained = 100, 37
        updates = [fixed_update(UpdateKind.BASE_FULL, 1559492, 0)] + [
            fixed_update(UpdateKind.LORA_PAIR, stored, t) for t in range(1, retained)
        ]
        rep = compression_report(raw, updates, total, retained)
        assert rep.tr == pytest.approx(0.37)
        # naive: exact byte arithmetic
        stored_total = 1559492 + (retained - 1) * stored
        assert rep.tc_naive == pytest.approx(raw * total / stored_total, rel=1e-12)
        # amortized: base stored once, deltas carry the per-snapshot cost
        assert rep.tc_amortized == pytest.approx(
            raw * total / ((retained - 1) * stored), rel=1e-12
        )
        assert rep.tc_amortized > rep.tc_naive

    def test_single_lossless_update(self):
        raw = 4096
        updates = [fixed_update(UpdateKind.BASE_FULL, raw)]
        rep = compression_report(raw, updates, total_snapshots=1, retained=1)
        assert rep.sc == 1.0 and rep.tc_naive == 1.0 and rep.tr == 1.0

    def test_sc_tr_consistency_when_sizes_match(self):
        raw = 1 << 20
        updates = [fixed_update(UpdateKind.FULL_DELTA, 12345, t) for t in range(7)]
        rep = compression_report(raw, updates, total_snapshots=21, retained=7)
        # within one ulp since all stored sizes agree
        assert abs(rep.tc_naive - rep.sc / rep.tr) <= math.ulp(rep.tc_naive)

    def test_zero_stored_bytes_rejected(self):
        with pytest.raises(ValueError):
            compression_report(100, [fixed_update(UpdateKind.BASE_FULL, 0)], 1, 1)

    def test_retained_bound(self):
        with pytest.raises(ValueError):
            compression_report(100, [fixed_update(UpdateKind.BASE_FULL, 10)], 1, 2)


class TestQuantizeDeflateBaseline:
    def test_full_mantissa_is_lossless(self, rng):
        snap = make_snapshot(rng.standard_normal((32, 32)))
        blob, err = baseline_quantize_deflate(snap, mantissa_bits=23)
        assert err == 0.0
        assert np.array_equal(
            np.frombuffer(zlib.decompress(blob), dtype="<u4").view("<f4").reshape(32, 32),
            snap.values,
        )

    def test_constant_field_compresses_hard(self):
        snap = make_snapshot(np.full((64, 64), 3.25))
        blob, err = baseline_quantize_deflate(snap, mantissa_bits=16)
        assert len(blob) < 0.01 * snap.values.nbytes
        assert err == 0.0  # 3.25 is exactly representable at 16 mantissa bits

    def test_noise_field_compresses_poorly(self, rng):
        snap = make_snapshot(rng.standard_normal((64, 64)))
        blob, _ = baseline_quantize_deflate(snap, mantissa_bits=10)
        assert snap.values.nbytes / len(blob) < 4.0

    def test_error_monotone_in_mantissa_bits(self, rng):
        snap = make_snapshot(rng.standard_normal((32, 32)))
        errs = [baseline_quantize_deflate(snap, bits)[1] for bits in (4, 8, 12, 16, 20, 23)]
        assert all(a >= b for a, b in zip(errs, errs[1:]))

    def test_bits_out_of_range(self, rng):
        snap = make_snapshot(rng.standard_normal((4, 4)))
        with pytest.raises(ValueError):
            baseline_quantize_deflate(snap, 0)
        with pytest.raises(ValueError):
            baseline_quantize_deflate(snap, 24)
