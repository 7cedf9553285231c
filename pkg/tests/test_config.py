import numpy as np
import pytest

from lineagesim.config import (
    ConfigError, config_hash, parse_config, serialize_config,
)
from lineagesim.model import (
    GaussianPeak, KisdiCompetition, TanhShiftRate, scenario,
)

MINIMAL = """
[model]
dimension = 1
n = 20
horizon = 1.0

[rates]
R = { form = "constant", value = 1.0 }
B = { form = "constant", value = 0.5 }
D = { form = "constant", value = 0.25 }
U = { form = "constant", value = 0.1 }
R_low = 1.0
R_high = 1.0
B_high = 0.5
D_high = 0.25
U_high = 0.1

[kernels]
nu_r = { atoms = [[0.0, 1.0]] }
nu_b = { atoms = [[0.0, 1.0]] }
nu_d = { atoms = [[0.0, 1.0]] }

[mutation]
probability = 0.5
variance = 0.8

[initial]
value = 1.5
count = 20

[rng]
seed = 7
"""


def test_parse_minimal():
    cfg = parse_config(MINIMAL)
    assert cfg.n == 20
    assert cfg.rates.B.value == 0.5
    assert cfg.mutation.probability == 0.5
    assert cfg.initial_traits.shape == (20, 1)
    assert np.all(cfg.initial_traits == 1.5)
    assert cfg.seed == 7
    assert cfg.prune_cutoff == 1e-12  # default survives omission


def test_round_trip_identity():
    cfg = parse_config(MINIMAL)
    text = serialize_config(cfg)
    again = parse_config(text)
    assert serialize_config(again) == text
    assert again == cfg


@pytest.mark.parametrize("name,kwargs", [
    ("neutral", {}),
    ("logistic", {}),
    ("dieckmann-doebeli", {"sigma_U": 0.3}),
    ("adler-goats", {}),
])
def test_round_trip_scenarios(name, kwargs):
    cfg = scenario(name, **kwargs)
    text = serialize_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert serialize_config(again) == text


def test_serialized_floats_survive_exactly():
    cfg = scenario("neutral", gamma_bar=1 / 3, sigma2=0.1 + 0.2)
    again = parse_config(serialize_config(cfg))
    assert again.rates.B.value == cfg.rates.B.value
    assert again.mutation.variance == cfg.mutation.variance


def test_explicit_trait_rows():
    text = MINIMAL.replace("value = 1.5\ncount = 20",
                           "traits = [[0.5], [1.5], [2.5]]")
    cfg = parse_config(text)
    assert cfg.initial_traits.shape == (3, 1)
    assert cfg.initial_traits[2, 0] == 2.5
    # distinct rows serialize back as rows, not as value/count
    assert "traits" in serialize_config(cfg)


def test_gaussian_peak_and_kisdi_forms():
    text = MINIMAL.replace(
        'B = { form = "constant", value = 0.5 }',
        'B = { form = "gaussian-peak", center = 2.0, width = 0.4, height = 1.0 }',
    ).replace(
        'U = { form = "constant", value = 0.1 }',
        'U = { form = "kisdi", capacity = 300.0, a = 1.2, c = 4.0 }',
    ).replace("B_high = 0.5", "B_high = 1.0")
    cfg = parse_config(text)
    assert isinstance(cfg.rates.B, GaussianPeak)
    assert isinstance(cfg.rates.U, KisdiCompetition)
    assert cfg.rates.U.a == 1.2
    assert parse_config(serialize_config(cfg)) == cfg


def test_tanh_form_round_trip():
    text = MINIMAL.replace(
        'B = { form = "constant", value = 0.5 }',
        'B = { form = "tanh-shift", amplitude = 0.4, offset = 0.5 }',
    ).replace("B_high = 0.5", "B_high = 0.9")
    cfg = parse_config(text)
    assert isinstance(cfg.rates.B, TanhShiftRate)
    assert parse_config(serialize_config(cfg)) == cfg


def test_exponential_kernel_round_trip():
    text = MINIMAL.replace(
        'nu_d = { atoms = [[0.0, 1.0]] }',
        'nu_d = { atoms = [[0.0, 0.25]], exponentials = [[0.75, 10.0]] }',
    )
    cfg = parse_config(text)
    assert cfg.rates.nu_d.exponentials == ((0.75, 10.0),)
    assert parse_config(serialize_config(cfg)) == cfg


def _expect_error(text, needle):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert needle in str(err.value)
    return err.value


def test_error_messages_name_the_field():
    _expect_error(MINIMAL.replace("[mutation]\nprobability = 0.5\n", "[mutation]\n"),
                  "mutation.probability")
    _expect_error(MINIMAL.replace('form = "constant", value = 1.0',
                                  'form = "mystery", value = 1.0'),
                  "rates.R.form")
    _expect_error(MINIMAL.replace('B = { form = "constant", value = 0.5 }',
                                  'B = { form = "constant", valeu = 0.5 }'),
                  "rates.B.valeu")
    _expect_error(MINIMAL.replace("n = 20", "n = 20.5"), "model.n")
    _expect_error(MINIMAL.replace("seed = 7", "seed = -3"), "rng.seed")
    _expect_error(MINIMAL + "\n[extra]\nx = 1\n", "extra")
    _expect_error(MINIMAL.replace("[model]\ndimension = 1\n",
                                  "[model]\ndimension = 1\nturbo = true\n"),
                  "model.turbo")


def test_kernel_field_errors():
    _expect_error(MINIMAL.replace("nu_r = { atoms = [[0.0, 1.0]] }",
                                  "nu_r = { atoms = [[0.0]] }"),
                  "kernels.nu_r.atoms[0]")
    _expect_error(MINIMAL.replace("nu_r = { atoms = [[0.0, 1.0]] }",
                                  "nu_r = { pulses = [[0.0, 1.0]] }"),
                  "kernels.nu_r.pulses")


def test_initial_section_errors():
    _expect_error(MINIMAL.replace("value = 1.5\ncount = 20", "count = 20"),
                  "initial")
    _expect_error(MINIMAL.replace("count = 20", "count = 0"), "initial.count")
    _expect_error(
        MINIMAL.replace("value = 1.5\ncount = 20",
                        "traits = [[0.5]]\nvalue = 1.5"),
        "initial.value")


def test_invalid_syntax_is_config_error():
    with pytest.raises(ConfigError):
        parse_config("[model\nn = ")


def test_config_hash_tracks_content():
    a = serialize_config(scenario("neutral"))
    b = serialize_config(scenario("neutral", gamma_bar=0.5))
    assert config_hash(a) == config_hash(a)
    assert config_hash(a) != config_hash(b)
    assert len(config_hash(a)) == 64
