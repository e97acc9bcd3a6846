"""Acceptance gate: every criterion at its stated tolerance.

Each test prints a single pass/fail line (visible with ``pytest -s`` or in
the captured output) and asserts the criterion outcome.  The expensive
artifacts (critical-point enumerations, trajectory counts, the homology
table of the path spaces) are shared through a session context.
"""

import pytest

from pathmorse import verification


@pytest.fixture(scope="module")
def ctx():
    return verification.VerificationContext()


def _run(ctx, number):
    fn = verification.CRITERIA[number - 1]
    result = fn(ctx)
    print()
    print(result.line())
    assert result.passed, result.line()
    return result


@pytest.mark.acceptance
def test_criterion_1_table_reproduction(ctx):
    # Omega(S^n) homology panel, n = 1..5, degrees 0..6: exact cells,
    # runtime bounded
    result = _run(ctx, 1)
    assert result.seconds < 600.0


@pytest.mark.acceptance
def test_criterion_2_index_theorem(ctx):
    result = _run(ctx, 2)
    assert result.seconds < 120.0


@pytest.mark.acceptance
def test_criterion_3_conjugate_point_location(ctx):
    _run(ctx, 3)


@pytest.mark.acceptance
def test_criterion_4_signed_trajectory_count(ctx):
    _run(ctx, 4)


@pytest.mark.acceptance
def test_criterion_5_energy_identity(ctx):
    _run(ctx, 5)


@pytest.mark.acceptance
def test_criterion_6_geodesic_actions(ctx):
    _run(ctx, 6)


@pytest.mark.acceptance
def test_criterion_7_gradient_correctness(ctx):
    _run(ctx, 7)


@pytest.mark.acceptance
def test_criterion_8_algebraic_soundness(ctx):
    _run(ctx, 8)


@pytest.mark.acceptance
def test_criterion_9_flow_monotonicity(ctx):
    _run(ctx, 9)
