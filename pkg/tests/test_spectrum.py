import numpy as np
import pytest

from mrap.hamiltonian import PulseSchedule
from mrap.nullspace import open_paths
from mrap.spectrum import gap_vs_depth, min_gap, spectrum_scan, write_gap_table
from mrap.topology import OcclusionMask, build_tree

# computed once with the default 201-point grid plus golden-section refinement
FROZEN_GAPS = {
    1: 0.491806, 2: 0.381731, 3: 0.313487, 4: 0.266577,
    5: 0.232170, 6: 0.205776, 7: 0.184851, 8: 0.167834,
}


def _depth_one_imaging(A, B):
    # sites 0e 0o 1e Te 1i Ti 1j Tj, written out by hand
    H = np.zeros((8, 8))
    for i, j, c in [(0, 1, A), (1, 2, B), (1, 3, B), (2, 4, A), (3, 5, A), (4, 6, B), (5, 7, B)]:
        H[i, j] = H[j, i] = c
    return H


def test_depth_one_gap_against_brute_force_grid():
    xs = np.linspace(0, 1, 20001)
    gaps = []
    for x in xs:
        w = np.abs(np.linalg.eigvalsh(_depth_one_imaging(np.sin(np.pi * x / 2) ** 2,
                                                         np.cos(np.pi * x / 2) ** 2)))
        gaps.append(w[w > 1e-9].min())
    assert min_gap(build_tree(1, True)) == pytest.approx(min(gaps), abs=1e-8)


def test_start_of_pulse_levels(tree2i):
    rep = spectrum_scan(tree2i, PulseSchedule(1.0), n_samples=3)
    allowed = np.array([0.0, 1.0, -1.0, np.sqrt(2), -np.sqrt(2)])
    assert all(np.abs(allowed - e).min() < 1e-10 for e in rep.eigenvalues[0])


def test_end_of_pulse_levels(tree2i):
    # A-links pair up e-o and e-i sites; no star of two B links survives
    end = spectrum_scan(tree2i, PulseSchedule(1.0), n_samples=3).eigenvalues[-1]
    allowed = np.array([0.0, 1.0, -1.0])
    assert all(np.abs(allowed - e).min() < 1e-10 for e in end)
    assert np.sum(np.abs(end) < 1e-9) == 4  # the isolated j sites


def test_gap_location_and_multiplicity(tree2i):
    rep = spectrum_scan(tree2i, PulseSchedule(1.0))
    assert abs(rep.min_gap_t - 0.5) < 0.1
    assert rep.min_gap == pytest.approx(FROZEN_GAPS[2], abs=1e-6)
    assert np.all(rep.zero_multiplicity[1:-1] == 4)
    assert np.all(np.abs(np.sort(rep.eigenvalues, axis=1) - np.sort(-rep.eigenvalues, axis=1))
                  < 1e-10)


def test_multiplicity_tracks_open_paths(tree2i, two_bombs):
    rep = spectrum_scan(tree2i, PulseSchedule(1.0), two_bombs, n_samples=21)
    assert len(open_paths(tree2i, two_bombs)) == 2
    assert np.all(rep.zero_multiplicity[1:-1] == 2)
    full = spectrum_scan(tree2i, PulseSchedule(1.0), two_bombs, n_samples=21,
                         restrict_to_root=False)
    assert np.all(full.zero_multiplicity[1:-1] == 4)


def test_detuned_leaf_drops_one_zero_mode(tree2i):
    det = {tree2i.node("1T_j"): 0.1}
    rep = spectrum_scan(tree2i, PulseSchedule(1.0), det=det, n_samples=21)
    assert np.all(rep.zero_multiplicity[1:-1] == 3)


def test_gap_scan_regression_and_monotone():
    rows = gap_vs_depth([1, 2, 3, 4, 5])
    for d, g in rows:
        assert g == pytest.approx(FROZEN_GAPS[d], abs=2e-6)
    gaps = [g for _, g in rows]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert gap_vs_depth([3, 1], workers=2) == [rows[2], rows[0]]


def test_gap_independent_of_total_time(tree2i):
    assert min_gap(tree2i, PulseSchedule(7.0)) == min_gap(tree2i, PulseSchedule(7000.0))


def test_needs_three_samples(tree2i):
    with pytest.raises(ValueError):
        spectrum_scan(tree2i, PulseSchedule(1.0), n_samples=2)


def test_csv_outputs(tmp_path, tree2i):
    rep = spectrum_scan(tree2i, PulseSchedule(1.0), n_samples=11)
    rep.to_csv(tmp_path / "s.csv")
    data = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    assert data.shape == (11, 19)
    assert np.allclose(data[:, 1:], rep.eigenvalues)
    write_gap_table(tmp_path / "g.csv", [(1, 0.5), (2, 0.25)])
    assert (tmp_path / "g.csv").read_text().splitlines() == ["depth,min_gap", "1,0.5", "2,0.25"]
