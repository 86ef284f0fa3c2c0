"""Shared fixtures: simulated datasets at two scales and tiny hand-built
sequences for exact-value tests."""

import numpy as np
import pytest

from lobeval.generator import SimConfig, default_profile, simulate
from lobeval.lobster import (NS, BookArray, DatasetBundle, MessageArray, Role,
                             SequencePair, write_pair_files)


def build_pair(rows, books, role=Role.REAL, seed_id="hand", step_index=None):
    """Assemble a SequencePair from literal message rows and book rows.

    ``rows``: (time_s, type, order_id, size, price, direction) tuples.
    ``books``: one [ap1, as1, bp1, bs1, ...] list per message.
    """
    rows = list(rows)
    time_ns = np.array([int(round(r[0] * NS)) for r in rows], dtype=np.int64)
    cols = [np.array([r[k] for r in rows], dtype=np.int64)
            for k in range(1, 6)]
    messages = MessageArray(time_ns, *cols)
    data = np.asarray(books, dtype=np.int64)
    if data.ndim != 2 or data.shape[1] % 4:
        raise ValueError("book rows must share a 4*n_levels width")
    return SequencePair(messages, BookArray(data, data.shape[1] // 4),
                        role, seed_id, step_index=step_index)


def mirror_pair(pair, reflect=2_000_100):
    """Bid/ask mirror: prices reflected around ``reflect``, sides swapped.

    ``reflect`` must be an even multiple of the tick so mirrored prices
    stay on the price grid.
    """
    m = pair.messages
    messages = MessageArray(m.time_ns.copy(), m.event_type.copy(),
                            m.order_id.copy(), m.size.copy(),
                            reflect - m.price, -m.direction)
    d = pair.books.data
    out = np.empty_like(d)
    for lvl in range(pair.books.n_levels):
        c = 4 * lvl
        out[:, c] = reflect - d[:, c + 2]      # new ask price from bid
        out[:, c + 1] = d[:, c + 3]
        out[:, c + 2] = reflect - d[:, c]      # new bid price from ask
        out[:, c + 3] = d[:, c + 1]
    # absent-side sentinels do not survive reflection arithmetic
    for lvl in range(pair.books.n_levels):
        c = 4 * lvl
        gone_ask = d[:, c + 3] == 0
        out[gone_ask, c] = 9_999_999_999
        out[gone_ask, c + 1] = 0
        gone_bid = d[:, c + 1] == 0
        out[gone_bid, c + 2] = -9_999_999_999
        out[gone_bid, c + 3] = 0
    return SequencePair(messages, BookArray(out, pair.books.n_levels),
                        pair.role, pair.seed_id + "_mirror",
                        step_index=pair.step_index.copy())


@pytest.fixture(scope="session")
def sim_100k():
    """One 10^5-message run of the default generator (the null dataset)."""
    return simulate(default_profile(),
                    SimConfig(seed=11, n_messages=100_000, seed_id="real_a"),
                    role=Role.REAL)


@pytest.fixture(scope="session")
def sim_100k_gen():
    """Independent 10^5-message run, same profile, different seed."""
    return simulate(default_profile(),
                    SimConfig(seed=12, n_messages=100_000, seed_id="gen_a"),
                    role=Role.GENERATED)


@pytest.fixture(scope="session")
def small_sims():
    real = simulate(default_profile(),
                    SimConfig(seed=21, n_messages=6000, seed_id="r0"),
                    role=Role.REAL)
    gen = simulate(default_profile(),
                   SimConfig(seed=22, n_messages=6000, seed_id="g0"),
                   role=Role.GENERATED)
    return real, gen


@pytest.fixture(scope="session")
def small_bundle(small_sims):
    real, gen = small_sims
    return DatasetBundle(real=[real.pair], generated=[gen.pair],
                         conditioning=[], tick_size=100, n_levels=10)


@pytest.fixture(scope="session")
def bundle_dir(small_sims, tmp_path_factory):
    """The small sims written out as a loadable dataset directory."""
    root = tmp_path_factory.mktemp("dataset")
    real, gen = small_sims
    for sub, sim in (("real", real), ("generated", gen)):
        d = root / sub
        d.mkdir()
        write_pair_files(sim.pair.messages, sim.pair.books, d,
                         sim.pair.seed_id)
    return root
