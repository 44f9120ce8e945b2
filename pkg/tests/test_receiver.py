import numpy as np
import pytest

from epa_noma import fec, receiver
from epa_noma.channel import ChannelRealization, draw_channel, transmit
from epa_noma.codebook import build_qam, build_spread_codebook, default_fds_signatures, map_bits
from epa_noma.core import build_factor_graph
from epa_noma.receiver import TurboConfig, turbo_receive

PAYLOAD = 176


def _setup(K, L=4, Nr=2, noise_var=0.0, seed=0, rate=0.5, flat=False):
    rng = np.random.default_rng(seed)
    const = build_qam(4)
    cbs = [build_spread_codebook(const, s, user=k) for k, s in enumerate(default_fds_signatures(K, L))]
    ccs = [fec.CodeConfig(PAYLOAD, rate, fec.user_interleaver_seed(1, k)) for k in range(K)]
    Ns = ccs[0].coded_bits // 2
    payloads = [fec.crc_attach(rng.integers(0, 2, PAYLOAD - fec.CRC_BITS, dtype=np.int8)) for _ in range(K)]
    x = np.stack([
        map_bits(fec.interleave(fec.encode(p, c), c.interleaver_seed), cb).reshape(Ns, L)
        for p, c, cb in zip(payloads, ccs, cbs)
    ])
    ch = draw_channel(rng, K, L, Nr, n_symbols=Ns, noise_var=noise_var, flat_over_chips=flat)
    y = transmit(x, ch, rng)
    return y, ch, build_factor_graph(cbs), cbs, ccs, payloads, x


def test_config_validation():
    with pytest.raises(ValueError, match="unknown detector"):
        TurboConfig("zf")
    with pytest.raises(ValueError):
        TurboConfig(T_outer=0)
    with pytest.raises(ValueError):
        TurboConfig(T_inner=0)


def test_noiseless_single_user_decodes_first_round():
    y, ch, g, cbs, ccs, payloads, _ = _setup(1)
    res = turbo_receive(y, ch, g, cbs, ccs)
    assert res.users[0].crc_ok and res.users[0].iterations_used == 1
    np.testing.assert_array_equal(res.users[0].hard_payload, payloads[0])
    assert res.detector_calls == 1


@pytest.mark.parametrize("det", ["epa", "mmse-pic"])
def test_high_snr_all_users_and_clean_residual(det):
    y, ch, g, cbs, ccs, payloads, _ = _setup(6, noise_var=1e-3, seed=1)
    res = turbo_receive(y, ch, g, cbs, ccs, TurboConfig(det))
    assert all(u.crc_ok for u in res.users)
    for u, p in zip(res.users, payloads):
        np.testing.assert_array_equal(u.hard_payload, p)
    # after hard cancellation only the noise is left
    noise_energy = 1e-3 * y.y.size
    assert np.sum(np.abs(res.residual) ** 2) <= 2 * noise_energy
    assert np.sum(np.abs(res.residual) ** 2) <= 1e-2 * np.sum(np.abs(y.y) ** 2)


def test_exact_cancellation_when_noiseless():
    y, ch, g, cbs, ccs, _, _ = _setup(4, seed=2)
    res = turbo_receive(y, ch, g, cbs, ccs)
    assert all(u.crc_ok for u in res.users)
    assert np.max(np.abs(res.residual)) <= 1e-10


def test_early_stop_counts_detector_calls():
    y, ch, g, cbs, ccs, _, _ = _setup(2, noise_var=1e-2, seed=3)
    res = turbo_receive(y, ch, g, cbs, ccs, TurboConfig(T_outer=5))
    assert res.decoded_after[-1] == 2
    assert res.detector_calls == len(res.decoded_after) < 5


def test_decoded_count_is_monotone():
    for seed in range(5):
        y, ch, g, cbs, ccs, _, _ = _setup(6, noise_var=10 ** -0.05, seed=10 + seed)
        res = turbo_receive(y, ch, g, cbs, ccs, TurboConfig(T_outer=4))
        assert np.all(np.diff(res.decoded_after) >= 0)
        assert res.decoded_after[-1] == sum(u.crc_ok for u in res.users)


def test_extrinsic_discipline(monkeypatch):
    # the detector must never be handed its own output as prior: the prior it
    # sees in round t equals the interleaved decoder extrinsic of round t-1
    y, ch, g, cbs, ccs, _, _ = _setup(3, noise_var=10 ** 0.2, seed=4)
    seen_priors, dec_out = [], []
    orig_det, orig_dec = receiver.run_detector, fec.siso_decode

    def spy_det(name, y_in, ch_in, graph, codebooks, prior, cfg):
        seen_priors.append(None if prior is None else prior.copy())
        return orig_det(name, y_in, ch_in, graph, codebooks, prior, cfg)

    def spy_dec(llr, cfg):
        ext, post, hard = orig_dec(llr, cfg)
        dec_out.append((cfg.interleaver_seed, ext.copy(), post.copy()))
        return ext, post, hard

    monkeypatch.setattr(receiver, "run_detector", spy_det)
    monkeypatch.setattr(receiver.fec, "siso_decode", spy_dec)
    res = turbo_receive(y, ch, g, cbs, ccs, TurboConfig(T_outer=2, hard_pic=False))
    assert seen_priors[0] is None
    assert res.detector_calls == 2
    for k in range(3):
        seed, ext, post = dec_out[k]
        np.testing.assert_allclose(seen_priors[1][k], fec.interleave(ext, seed))
        assert not np.allclose(seen_priors[1][k], fec.interleave(post, seed))


def test_hard_pic_off_keeps_users_in_graph(monkeypatch):
    y, ch, g, cbs, ccs, payloads, _ = _setup(4, noise_var=1e-2, seed=5)
    sizes = []
    orig = receiver.run_detector

    def spy(name, y_in, ch_in, graph, codebooks, prior, cfg):
        sizes.append(len(codebooks))
        return orig(name, y_in, ch_in, graph, codebooks, prior, cfg)

    monkeypatch.setattr(receiver, "run_detector", spy)
    res = turbo_receive(y, ch, g, cbs, ccs, TurboConfig(T_outer=3, hard_pic=False))
    assert all(s == 4 for s in sizes)
    np.testing.assert_array_equal(res.residual, y.y)
    for u, p in zip(res.users, payloads):
        assert u.crc_ok
        np.testing.assert_array_equal(u.hard_payload, p)


def test_hard_pic_shrinks_graph(monkeypatch):
    # a strong and a faded user: the strong one decodes first and leaves
    y, ch, g, cbs, ccs, _, x = _setup(2, noise_var=0.05, seed=6)
    h = ch.h.copy()
    h[1] *= 0.1
    ch = ChannelRealization(h, 0.05)
    y = transmit(x, ch, np.random.default_rng(0))
    sizes = []
    orig = receiver.run_detector

    def spy(name, y_in, ch_in, graph, codebooks, prior, cfg):
        sizes.append(len(codebooks))
        return orig(name, y_in, ch_in, graph, codebooks, prior, cfg)

    monkeypatch.setattr(receiver, "run_detector", spy)
    res = turbo_receive(y, ch, g, cbs, ccs, TurboConfig(T_outer=3))
    assert res.users[0].crc_ok and res.users[0].iterations_used == 1
    assert sizes == [2, 1, 1]


def test_map_detector_in_loop():
    y, ch, g, cbs, ccs, payloads, _ = _setup(2, noise_var=1e-2, seed=7)
    res = turbo_receive(y, ch, g, cbs, ccs, TurboConfig("map"))
    assert all(u.crc_ok for u in res.users)
