import json

import pytest

from conftest import oracle_eval
from finite_cot.tasks import (GeneratorConfig, TaskInstance, check_instance, compose, cvp_instance, gen_cvp,
                              gen_itersq, gen_modadd, gen_permcomp, generate_dataset, parse_cvp,
                              primes_below, read_dataset, serialize_dataset, write_dataset)

ID = (1, 2, 3, 4, 5)


def test_modadd_examples():
    inst = gen_modadd(7, 4, x=[3, 5, 6])
    assert inst.tokens == ("3", "5", "6", "=")
    assert inst.cot == ("3", "1", "0") and inst.label == ("0",)
    zero = gen_modadd(2, 5, x=[0, 0, 0, 0])
    assert zero.label == ("0",) and set(zero.cot) == {"0"}
    single = gen_modadd(7, 2, x=[4])
    assert single.cot == ("4",) and single.label == ("4",)


def test_modadd_errors():
    with pytest.raises(ValueError):
        gen_modadd(1, 4)
    with pytest.raises(ValueError):
        gen_modadd(7, 1)
    with pytest.raises(ValueError):
        gen_modadd(7, 3, x=[7])


def test_permcomp_examples():
    assert gen_permcomp(2, perms=[(2, 1, 3, 4, 5), ID]).label == ("2", "1", "3", "4", "5")
    s = (2, 3, 1, 4, 5)
    assert gen_permcomp(2, perms=[s, s]).label == ("3", "1", "2", "4", "5")
    inst = gen_permcomp(6, perms=[s] * 6)
    steps = [tuple(int(v) for v in inst.cot[i: i + 5]) for i in range(0, 30, 5)]
    assert steps[2] == ID and steps[5] == ID and steps[0] != ID
    assert len(inst.tokens) == 7 * 6 + 1


def test_permcomp_convention():
    # (sigma o pi)_i = sigma_{pi_i}
    assert compose((2, 3, 1, 4, 5), (5, 4, 3, 2, 1)) == (5, 4, 1, 3, 2)


def test_permcomp_hints_sit_on_entries():
    s, t = (2, 1, 3, 4, 5), (1, 3, 2, 4, 5)
    inst = gen_permcomp(2, perms=[s, t])
    assert len(inst.hints) == len(inst.tokens)
    assert inst.hints[:7] == (None, "2", "1", "3", "4", "5", None)
    assert inst.hints[7:14] == (None, "2", "3", "1", "4", "5", None)
    assert inst.hints[-1] is None


def test_itersq_examples():
    one = gen_itersq(p=5, r=2, squarings=1)
    assert one.tokens == ("5", "2", "^2", "=") and one.label == ("4",) and one.cot == ("4",)
    two = gen_itersq(p=5, r=2, squarings=2)
    assert two.cot == ("4", "1") and two.label == ("1",)
    ones = gen_itersq(p=13, r=1, squarings=5)
    assert set(ones.cot) == {"1"} and ones.label == ("1",)


def test_primes_below():
    want = [q for q in range(2, 100) if all(q % d for d in range(2, q))]
    assert list(primes_below(100)) == want
    assert len(primes_below(2)) == 0


def test_cvp_examples():
    one = gen_cvp(1, seed=0)
    assert len(one.tokens) == 5 and one.tokens[1:] == ("NA", "NA", "1", "=")
    assert one.label == (one.tokens[0],)
    two = parse_cvp(["TRUE", "NA", "NA", "1", "NOT", "1", "NA", "2", "="])
    circuit, bits, _ = two
    assert bits == (1,) and oracle_eval(circuit, bits) == [0]
    inst = cvp_instance(["TRUE", "NA", "NA", "1", "NOT", "1", "NA", "2", "="])
    assert inst.label == ("FALSE",)
    assert inst.cot == ("TRUE", "NA", "NA", "TRUE", "NOT", "TRUE", "NA", "FALSE")
    for m in (1, 2, 3, 7, 20):
        assert len(gen_cvp(m, seed=m).tokens) == 4 * m + 1


def test_cvp_reevaluation():
    for seed in range(200):
        inst = gen_cvp(12, seed=seed)
        circuit, bits, groups = parse_cvp(inst.tokens)
        values = list(bits) + oracle_eval(circuit, bits)
        name = {1: "TRUE", 0: "FALSE"}
        assert inst.cot[3::4] == tuple(name[v] for v in values)
        assert inst.label == (name[values[-1]],)
        # constants lead, as documented
        kinds = [g[0] for g in groups]
        assert all(k in ("TRUE", "FALSE") for k in kinds[:3])
        assert all(k in ("AND", "OR", "NOT") for k in kinds[3:])


def test_parse_cvp_errors():
    with pytest.raises(ValueError):
        parse_cvp(["TRUE", "NA", "NA", "1"])
    with pytest.raises(ValueError):
        parse_cvp(["TRUE", "NA", "NA", "2", "="])
    with pytest.raises(ValueError):
        parse_cvp(["XOR", "NA", "NA", "1", "="])


@pytest.mark.parametrize("task,params", [
    ("modadd", {"p": 7, "n": 16}),
    ("permcomp", {"m": 8}),
    ("itersq", {"T_bound": 1000, "max_squarings": 8}),
    ("cvp", {"m": 20}),
])
def test_invariants_hold(task, params):
    config = GeneratorConfig(task, params, count=300, seed=3)
    for inst in generate_dataset(config):
        assert check_instance(inst) == []
        assert inst.cot[-len(inst.label):] == inst.label
        assert len(inst.hints) == len(inst.tokens)


def test_check_instance_catches_damage():
    good = gen_modadd(7, 4, x=[3, 5, 6])
    bad = TaskInstance(good.tokens, ("3", "2", "0"), good.hints, good.label, "modadd", 7)
    assert check_instance(bad)
    bad_label = TaskInstance(good.tokens, good.cot, good.hints, ("5",), "modadd", 7)
    assert check_instance(bad_label)


def test_records_per_variant():
    inst = gen_modadd(7, 4, x=[3, 5, 6])
    assert inst.record("base") == {"tokens": ["3", "5", "6", "="], "label": ["0"]}
    assert inst.record("cot") == {"tokens": ["3", "5", "6", "="], "cot": ["3", "1", "0"]}
    assert inst.record("hint")["hints"] == ["3", "1", "0", "0"]
    with pytest.raises(ValueError):
        inst.record("full")


def test_serialization_and_regeneration(tmp_path):
    config = GeneratorConfig("itersq", {"T_bound": 100, "max_squarings": 4}, count=50, seed=11)
    paths = {}
    for variant in ("base", "cot", "hint"):
        a, b = tmp_path / f"{variant}.a.jsonl", tmp_path / f"{variant}.b.jsonl"
        assert write_dataset(config, variant, a) == 50
        write_dataset(config, variant, b)
        assert a.read_bytes() == b.read_bytes()
        paths[variant] = a
    head, base = read_dataset(paths["base"])
    assert head["task"] == "itersq" and head["variant"] == "base" and head["seed"] == 11
    _, cot = read_dataset(paths["cot"])
    for rb, rc in zip(base, cot):
        assert rb["tokens"] == rc["tokens"]
        assert rc["cot"][-1:] == rb["label"]
        assert all(isinstance(t, str) for t in rb["tokens"])
    other = GeneratorConfig("itersq", {"T_bound": 100, "max_squarings": 4}, count=50, seed=12)
    assert serialize_dataset(other, generate_dataset(other), "base") != paths["base"].read_text()


def test_instance_seeds_are_independent_of_count():
    small = GeneratorConfig("cvp", {"m": 6}, count=5, seed=1)
    large = GeneratorConfig("cvp", {"m": 6}, count=20, seed=1)
    assert generate_dataset(small) == generate_dataset(large)[:5]


def test_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig("sorting", {})
    with pytest.raises(ValueError):
        GeneratorConfig("modadd", {"p": 7})
    with pytest.raises(ValueError):
        GeneratorConfig("cvp", {"m": 3, "p": 2})
    config = GeneratorConfig("permcomp", {"m": 2}, count=1)
    line = serialize_dataset(config, generate_dataset(config), "base").splitlines()[1]
    assert json.loads(line).keys() == {"tokens", "label"}
    with pytest.raises(ValueError):
        serialize_dataset(config, [gen_modadd(3, 3)], "base")
