"""Smoke test for the pyfcchase bindings, run against the bundled corpus."""

from pathlib import Path

import pyfcchase

CORPUS = Path(__file__).resolve().parent.parent / "corpus"


def load(sub, name):
    d = CORPUS / sub
    read = lambda ext: (d / f"{name}.{ext}").read_text() if (d / f"{name}.{ext}").exists() else ""
    return pyfcchase.Problem(read("tgd"), read("cq"), read("db"))


def main():
    chain = load("programs", "chain")
    assert chain.is_joinless()
    assert chain.join_violations() == []
    assert chain.sticky_marking() == []
    assert "edge" in chain.query_names

    p = chain.pipeline()
    assert not p.is_cyclic("edge")
    assert p.is_cyclic("loop")
    assert p.normalize("edge"), "expected normal-form candidates"

    c = p.chase()
    c.run_to(4)
    assert c.rounds == 4 and c.num_atoms > 0
    assert c.trace()

    m0, m1 = p.model(0), p.model(1)
    assert m0.domain_size <= m1.domain_size
    assert m1.text().startswith("domain ")
    assert not m1.holds("loop")

    v = p.decide("edge")
    assert v.outcome == "entailed" and v.witness, v
    v = p.decide("loop")
    assert v.outcome == "not-entailed" and v.countermodel.startswith("domain "), v
    v = p.decide("edge", max_elements=2)
    assert v.outcome == "unknown", v

    assert "loop" in p.report("chain")

    trains = load("specialize", "trains")
    assert not trains.is_joinless()
    try:
        trains.pipeline()
    except ValueError:
        pass
    else:
        raise AssertionError("pipeline accepted a program with joins")

    staff = load("specialize", "staff")
    program, dictionary = staff.specialize()
    assert dictionary.strip()
    assert pyfcchase.Problem(program).is_joinless()

    try:
        pyfcchase.Problem("P(x) -> ")
    except ValueError:
        pass
    else:
        raise AssertionError("parse error not raised")

    print("smoke test ok")


if __name__ == "__main__":
    main()
