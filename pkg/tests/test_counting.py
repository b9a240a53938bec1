"""Counting formulas against their literal-enumeration oracle."""

import pytest
from hypothesis import given, settings, strategies as st

from mlmdiag.counting import (
    BRUTE_FORCE_LIMIT,
    brute_force_enumerate,
    count_report,
    joint_dof,
    mlm_count_k,
    mlm_count_single,
)


def test_joint_dof_examples():
    assert joint_dof(2, 3) == 7
    assert joint_dof(2, 1) == 1
    assert joint_dof(10, 6) == 999999


def test_mlm_count_single_examples():
    assert mlm_count_single(2, 3) == 12
    assert mlm_count_single(2, 2) == 4


def test_mlm_count_k_examples():
    assert mlm_count_k(2, 3, 2) == 3 * 2 * 1
    assert mlm_count_k(2, 3, 1) == mlm_count_single(2, 3) == 12
    assert mlm_count_k(3, 2, 2) == 1 * 1 * 4


def test_brute_force_examples():
    assert brute_force_enumerate(2, 3, 1) == 12
    assert brute_force_enumerate(2, 2, 2) == 1


def test_brute_force_matches_closed_form_small_grid():
    for v in range(2, 5):
        for l in range(1, 7):
            for k in range(1, l + 1):
                assert brute_force_enumerate(v, l, k) == mlm_count_k(v, l, k)


def test_k1_equals_single_form():
    for v in range(2, 9):
        for l in range(1, 12):
            assert mlm_count_k(v, l, 1) == mlm_count_single(v, l)


def test_excess_and_boundary():
    # MLM conditionals exceed the joint dof for every l >= 2 ...
    for v in range(2, 9):
        for l in range(2, 12):
            assert mlm_count_single(v, l) > joint_dof(v, l)
        # ... and are exactly sufficient at l = 1.
        assert mlm_count_single(v, 1) == joint_dof(v, 1)


def test_domain_errors():
    with pytest.raises(ValueError):
        joint_dof(1, 3)
    with pytest.raises(ValueError):
        joint_dof(2, 0)
    with pytest.raises(ValueError):
        mlm_count_k(2, 3, 0)
    with pytest.raises(ValueError):
        mlm_count_k(2, 3, 4)
    with pytest.raises(ValueError):
        brute_force_enumerate(2, 21, 1)  # 2^21 > limit


def test_limit_is_checked_on_v_to_the_l():
    assert 3**13 > BRUTE_FORCE_LIMIT
    with pytest.raises(ValueError):
        brute_force_enumerate(3, 13, 1)


def test_no_overflow_at_scale():
    # Arbitrary precision: exact values far beyond machine words.
    report = count_report(50, 50, 3)
    assert report.d_joint == 50**50 - 1
    assert report.n_mlm == mlm_count_k(50, 50, 3)
    assert report.excess_num * report.d_joint == report.n_mlm * report.excess_den


def test_report_json_fields():
    data = count_report(2, 3).to_json()
    assert data["d_joint"] == 7
    assert data["n_mlm"] == 12
    assert data["excess_decimal"].startswith("1.714285")


@settings(max_examples=40)
@given(st.integers(2, 6), st.integers(1, 8), st.data())
def test_count_k_versus_sum_identity(v, l, data):
    k = data.draw(st.integers(1, l))
    value = mlm_count_k(v, l, k)
    assert value > 0
    # Eq. 8 is symmetric in the position choice only through the binomial term.
    assert value % (v - 1) ** k == 0
