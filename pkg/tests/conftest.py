import numpy as np
import pytest

from ristrack.channel import ArrayGeometry, ChannelSet, ClusterConfig, generate_channel_set


def small_geometries(n_bs=4, n_ris=3, S=2, carrier=100e9, bandwidth=10e9):
    bs = ArrayGeometry.half_wavelength_ula(n_bs, carrier, bandwidth, S)
    ris = ArrayGeometry.half_wavelength_ula(n_ris, carrier, bandwidth, S)
    return bs, ris


def small_channel(seed=0, n_bs=4, n_ris=3, K=1, S=2, **cfg_kw):
    cfg = ClusterConfig(n_subcarriers_S=S, **cfg_kw)
    return generate_channel_set((cfg, cfg, cfg), small_geometries(n_bs, n_ris, S), K, seed)


def random_channel(rng, S, M, N_t, K):
    """Unstructured i.i.d. CN(0, 1) channel triplet."""
    def cn(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return ChannelSet(cn(S, M, N_t), cn(K, S, N_t), cn(K, S, M))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for the acceptance summary, then assert."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'} ({detail})"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
