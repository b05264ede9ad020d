import numpy as np
import pytest

from sotvae import Config, SynthConfig, synth_corpus
from sotvae.model import SoTVAE, make_batch


def tiny_config(**overrides) -> Config:
    base = dict(d_model=16, d_ff=32, heads=2, decoder_layers=1, coattn_layers=1, d_z=8, d_pre=8,
                vocab_size=60, d_in=6, max_len=8, p_max=24, batch_size=8, epochs=2, dropout=0.0)
    base.update(overrides)
    return Config(**base).validate()


@pytest.fixture(scope="session")
def tiny_data():
    corpus, vocab, lexicon = synth_corpus(SynthConfig(vocab_size=60, n_samples=48, d_in=6, seed=3))
    return corpus, vocab, lexicon


@pytest.fixture
def tiny_model():
    return SoTVAE(tiny_config())


@pytest.fixture
def tiny_batch(tiny_data):
    corpus, _, _ = tiny_data
    return make_batch(corpus.samples[:4], tiny_config())


def sampled_gradcheck(loss_fn, params, rng, per_param=2, h=1e-5, rtol=1e-4, floor=1e-6):
    """Finite-difference check on a few random coordinates of each parameter.

    ``loss_fn`` must be deterministic (rebuild any random streams inside it).
    Returns the worst relative error seen.
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    worst = 0.0
    for p in params:
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for i in rng.choice(flat.size, size=min(per_param, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn().item()
            flat[i] = old - h
            down = loss_fn().item()
            flat[i] = old
            num = (up - down) / (2 * h)
            ana = g.reshape(-1)[i]
            err = abs(num - ana) / max(abs(num), abs(ana), floor)
            worst = max(worst, err)
            assert err <= rtol, f"{getattr(p, 'name', '?')}[{i}]: analytic {ana:.6e} vs numeric {num:.6e}"
    return worst


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
