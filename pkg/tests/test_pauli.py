import numpy as np
import pytest

from cnrvd.pauli import (BASIS_ROTATIONS, PAULI_MATRICES, PauliString, eigenstate, multiply_letters, pauli_labels,
                         pauli_matrix)


@pytest.mark.parametrize("letter", "XYZ")
@pytest.mark.parametrize("sign", [1, -1])
def test_eigenstates(letter, sign):
    v = eigenstate(letter, sign)
    assert np.allclose(PAULI_MATRICES[letter] @ v, sign * v, atol=1e-12)


@pytest.mark.parametrize("letter", "IXYZ")
def test_basis_rotations_map_to_z(letter):
    v = BASIS_ROTATIONS[letter]
    target = PAULI_MATRICES["I" if letter == "I" else "Z"]
    assert np.allclose(v @ PAULI_MATRICES[letter] @ v.conj().T, target, atol=1e-12)


def test_labels_order_and_count():
    assert pauli_labels(1) == ["X", "Y", "Z"]
    assert len(pauli_labels(3, include_identity=True)) == 64


def test_matrix_qubit_order():
    assert np.allclose(pauli_matrix("ZI"), np.kron(PAULI_MATRICES["Z"], np.eye(2)))


def test_multiply_letters_matches_matrices():
    for a in "IXYZ":
        for b in "IXYZ":
            phase, c = multiply_letters(a, b)
            assert np.allclose(PAULI_MATRICES[a] @ PAULI_MATRICES[b], phase * PAULI_MATRICES[c])


def test_string_product_and_commutation(rng):
    for _ in range(20):
        a = PauliString("".join(rng.choice(list("IXYZ"), 3)))
        b = PauliString("".join(rng.choice(list("IXYZ"), 3)))
        phase, c = a * b
        assert np.allclose(a.matrix @ b.matrix, phase * c.matrix)
        comm = np.allclose(a.matrix @ b.matrix, b.matrix @ a.matrix)
        assert a.commutes_with(b) == comm


def test_support_and_weight():
    p = PauliString("IXIZY")
    assert p.support == (1, 3, 4) and p.weight == 3
    assert PauliString.identity(3).is_identity
    assert PauliString.from_support(3, {2: "Y"}).letters == "IIY"


def test_random_weight(rng):
    for w in range(4):
        assert PauliString.random(3, w, rng).weight == w
    with pytest.raises(ValueError):
        PauliString.random(2, 3, rng)


def test_invalid_label():
    with pytest.raises(ValueError):
        PauliString("XQ")
    with pytest.raises(ValueError):
        PauliString("")


def test_expectation():
    plus = eigenstate("X", 1)
    assert PauliString("X").expectation(np.outer(plus, plus.conj())) == pytest.approx(1.0)
