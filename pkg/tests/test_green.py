"""Green's function evaluation, boundary values, and branch expansions."""

import math

import numpy as np
import pytest

from latticewave.green import (
    BranchPointProximityError,
    SQRT8,
    SpectralParameter,
    build_greens_table,
    canonical_offset,
    cauchy_halfdisk_probe,
    green_eval,
    green_eval_boundary_ladder,
    green_eval_torus_oracle,
    greens_offset_values,
    log_coefficient_reference,
    log_expansion,
    u2_growth_check,
)

# pinned before the main build by the independent 2D tensor-product torus
# quadrature at 512^2..2048^2 nodes (values agree to 1e-15)
G_AT_I_ORIGIN = 1.5962422221317831 + 0.0j


def five_point_defect(k, xi, vals):
    g = lambda p, q: vals[canonical_offset((p, q))]
    x, y = xi
    lap = g(x + 1, y) + g(x - 1, y) + g(x, y + 1) + g(x, y - 1) - 4 * g(x, y)
    return -lap - k * k * g(x, y)


def test_pinned_origin_value():
    assert green_eval(1j, (0, 0)) == pytest.approx(G_AT_I_ORIGIN, abs=1e-10)
    # the oracle itself reproduces its frozen value
    assert green_eval_torus_oracle(1j, (0, 0), n=512) == pytest.approx(
        G_AT_I_ORIGIN, abs=1e-12
    )


def test_reduction_matches_torus_oracle():
    ks = [1j, 2j, 0.5 + 0.7j, 1.9 + 0.5j, -1.1 + 0.9j]
    xis = [(0, 0), (1, 0), (2, 1), (5, 3)]
    for k in ks:
        for xi in xis:
            a = green_eval(k, xi)
            b = green_eval_torus_oracle(k, xi, n=512)
            assert abs(a - b) <= 1e-10, (k, xi)


def test_defect_identity_interior_and_boundary():
    # (-Lap - k^2) G = 2*pi*delta on |xi|<=10
    for k in [1j, 0.5 + 0.7j, 1.9 + 1e-3j, 2.9]:
        vals = greens_offset_values(k, 12)
        for x in range(-10, 11):
            for y in range(-10, 11):
                if x * x + y * y > 100:
                    continue
                target = 2 * np.pi if (x, y) == (0, 0) else 0.0
                d = five_point_defect(complex(k), (x, y), vals)
                assert abs(d - target) <= 1e-9, (k, (x, y))


def test_symmetries_under_reflection_and_swap():
    for k in [1j, 0.5 + 0.7j]:
        for xi in [(2, 1), (3, -2)]:
            g = green_eval(k, xi)
            assert green_eval(k, (-xi[0], -xi[1])) == pytest.approx(g, abs=1e-12)
            assert green_eval(k, (xi[1], xi[0])) == pytest.approx(g, abs=1e-12)
            assert green_eval(k, (-xi[0], xi[1])) == pytest.approx(g, abs=1e-12)


def test_conjugation_symmetry():
    for k in [0.6 + 0.8j, -1.2 + 0.4j]:
        for xi in [(0, 0), (2, 1)]:
            a = green_eval(-np.conj(k), xi)
            assert a == pytest.approx(np.conj(green_eval(k, xi)), abs=1e-12)


def test_imaginary_axis_real_positive_decreasing():
    sigmas = [0.3, 0.7, 1.5, 3.0]
    vals = [green_eval(1j * s, (0, 0)) for s in sigmas]
    for v in vals:
        assert abs(v.imag) < 1e-12
        assert v.real > 0
    assert all(a.real > b.real for a, b in zip(vals, vals[1:]))


def test_branch_point_proximity_rejected():
    with pytest.raises(BranchPointProximityError):
        green_eval(2.0 + 1e-10j, (0, 0))
    with pytest.raises(BranchPointProximityError):
        SpectralParameter.boundary(SQRT8 + 1e-10)


def test_boundary_values_match_eta_ladder():
    # Richardson extrapolation of interior values cross-checks the direct
    # limiting-branch evaluation on the band
    for k in [1.0, 1.6, 2.5, -1.7]:
        for xi in [(0, 0), (2, 1)]:
            direct = green_eval(k, xi)
            ladder = green_eval_boundary_ladder(k, xi)
            assert abs(direct - ladder) < 1e-9


def test_boundary_above_band_is_analytic_point():
    # |k| > sqrt8 real: boundary value equals the plain analytic value and
    # is real there
    v = green_eval(2.9, (1, 1))
    assert abs(v.imag) < 1e-12
    assert v.real < 0  # k^2 above the band pushes the integrand negative


def test_analyticity_probe_cauchy_halfdisk():
    # Cauchy reconstruction over a half-disk whose diameter carries the
    # boundary-from-above values: succeeds only if those values are the
    # limits of the analytic interior function
    for k0 in [1.0, 2.4]:
        for xi in [(0, 0), (1, 1)]:
            target = green_eval(complex(k0, 0.05), xi)
            probe = cauchy_halfdisk_probe(k0, radius=0.1, xi=xi)
            assert abs(target - probe) < 1e-6


def test_quadrature_tolerance_contract():
    with pytest.raises(ValueError):
        green_eval(1j, (0, 0), tol=1e-15)


def test_log_expansion_elliptic_bottom():
    # u1 at k=0 is the same constant for every xi
    vals = [log_expansion(0, xi).u1 for xi in [(0, 0), (1, 0), (5, 3)]]
    for v in vals:
        assert abs(v - log_coefficient_reference(0, (0, 0))) < 1e-5
    assert max(abs(a - b) for a in vals for b in vals) < 2e-5


def test_log_expansion_elliptic_top_parity():
    for xi in [(0, 0), (1, 0), (1, 1), (3, 2)]:
        got = log_expansion(2, xi).u1
        want = log_coefficient_reference(2, xi)
        assert abs(got - want) < 1e-5
        assert want == pytest.approx(0.5 * (-1.0) ** (xi[0] + xi[1]))


def test_log_expansion_saddle_and_parity_vanishing():
    for xi in [(0, 0), (1, 1), (2, 1), (1, 0), (5, 3)]:
        got = log_expansion(1, xi).u1
        want = log_coefficient_reference(1, xi)
        if want == 0:
            assert abs(got) < 1e-6  # sharp vanishing when xi1+xi2 is odd
        else:
            assert abs(got - want) < 1e-5


def test_log_expansion_conjugate_pair():
    for s, xi in [(1, (1, 1)), (2, (1, 0))]:
        a = log_expansion(s, xi).u1
        b = log_expansion(-s, xi).u1
        assert abs(a - np.conj(b)) < 1e-6


def test_u2_growth_along_ray():
    rep = u2_growth_check(list(range(8, 65, 8)))
    c1 = log_coefficient_reference(0, (0, 0)).real
    assert abs(rep.slope - c1) < 0.01 * abs(c1)
    # symmetry of u2 under reflection of one coordinate
    a = log_expansion(0, (6, 3)).u2
    b = log_expansion(0, (-6, 3)).u2
    assert abs(a - b) < 1e-8


def test_u2_growth_requires_enough_radii():
    with pytest.raises(ValueError):
        u2_growth_check([8, 16, 24])


def test_u2_remainder_trend():
    # residual after removing c1 ln|xi| + c2 shrinks along the ray like o(1/|xi|)
    rep = u2_growth_check([16, 24, 32, 40, 48, 56, 64])
    r32 = abs(rep.residuals[2])
    r64 = abs(rep.residuals[-1])
    assert r64 <= 3.0 * r32 / 2.0


def test_greens_table_cache_roundtrip(tmp_path):
    t1 = build_greens_table(0.8 + 0.6j, 1, cache_dir=str(tmp_path))
    t2 = build_greens_table(0.8 + 0.6j, 1, cache_dir=str(tmp_path))
    assert t1.canonical == t2.canonical
    mat = t1.kernel_matrix()
    assert mat.shape == (9, 9)
    assert np.allclose(mat, mat.T)  # kernel symmetry G(xi-eta)=G(eta-xi)
    files = list(tmp_path.iterdir())
    assert len(files) == 1 and files[0].suffix == ".json"
