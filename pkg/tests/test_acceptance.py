"""Acceptance checks, one test per criterion.

Each test prints a single ``[PASS]`` / ``[FAIL]`` line with the measured
quantities; tolerances, sizes and runtime limits are fixed here.
"""
import time

import numpy as np

from fredholm_games.convergence import (ConvergenceProblem, lipschitz_label_noise, run_given_sequence,
                                        run_sampled)
from fredholm_games.examples import (SystemicRiskInput, extended_grid, network_sde_build, origin_objectives,
                                     simple_graph_build, systemic_assumption_check, systemic_risk_build,
                                     volterra_reduce)
from fredholm_games.finite_game import (FiniteGameSpec, build_from_graph, nash_gap, solve_equilibrium)
from fredholm_games.graphon import (GraphonGameSpec, GraphonGrid, graphon_from_function, mode_noise,
                                    solve_graphon, spectral_decompose, step_graphon)
from fredholm_games.noise import NoiseEnsemble, NoiseModel, idiosyncratic_model, simulate
from fredholm_games.sampling import avella_bounds, cut_norm_step, operator_norm_diff, sample
from fredholm_games.timekernel import (KernelGrid, constant_kernel, delay_measure_kernel, exp_matrix_kernel,
                                       indicator_kernel, make_grid, volterra_resolvent)

from oracles import (constant_resolvent_closed_form, critical_horizon, dense_deterministic_solution,
                     midpoint_rank_one_eigenvalue, random_volterra)


def report(number, title, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}: {detail}")
    assert ok, detail


def _random_spec(rng, N, nt, noise="deterministic", scale=0.3):
    g = make_grid(float(rng.uniform(0.5, 2.0)), nt)
    while True:
        B = random_volterra(rng, nt, N, scale)
        Bb = random_volterra(rng, nt, N, scale)
        for i in range(N):
            Bb[:, :, i, i] = B[:, :, i, i]
        lam = rng.uniform(0.5, 2.0, N)
        if noise == "deterministic":
            model = NoiseModel(g, rng.standard_normal((N, nt)), np.zeros((N, 0, nt)))
        else:
            model = idiosyncratic_model(g, N, drift=rng.standard_normal((N, 1)), sigma=float(rng.uniform(0.2, 1.0)),
                                        common_sigma=float(rng.uniform(0.0, 0.5)))
        spec = FiniteGameSpec(KernelGrid(g, B, True), KernelGrid(g, Bb, True), lam, model)
        if spec.coercivity().c0_estimate > 0.05:
            return spec


def test_criterion_01_deterministic_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(20):
        N = int(rng.integers(1, 6))
        nt = int(rng.integers(4, 65))
        spec = _random_spec(rng, N, nt)
        ens = simulate(spec.noise, 1, 0)
        res = solve_equilibrium(spec, ens)
        ref = dense_deterministic_solution(spec.B.values, spec.Bbar.values, spec.Lambda, spec.noise.drift,
                                           spec.grid.dt)
        worst = max(worst, np.abs(res.alpha[0] - ref).max() / np.abs(ref).max())
    wall = time.perf_counter() - t0
    report(1, "deterministic oracle", worst <= 1e-8 and wall <= 60,
           f"max relative error {worst:.2e} (tol 1e-8) over 20 specs, {wall:.1f}s (limit 60s)")


def test_criterion_02_foc_residual():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    worst = 0.0
    # finite games, N up to 10
    for N, nt in ((3, 64), (10, 32), (6, 48)):
        spec = _random_spec(rng, N, nt, noise="stochastic", scale=0.2)
        ens = simulate(spec.noise, 1000, int(rng.integers(1 << 30)))
        res = solve_equilibrium(spec, ens)
        bound = 1e-8 * (1.0 + np.abs(ens.values).reshape(len(ens), -1).max(axis=1))
        worst = max(worst, float((res.foc_residual / bound).max()))
    # per-mode graphon residuals
    g = make_grid(1.0, 64)
    n_u = 32
    spec = GraphonGameSpec(indicator_kernel(g, 0.5), indicator_kernel(g, 1.0), 1.0,
                           graphon_from_function(lambda u, v: 0.5 * (1 + u * v), n_u),
                           lipschitz_label_noise(g, n_u))
    ens = simulate(spec.noise, 1000, 5)
    res = solve_graphon(spec, ens, energy_tol=0.0)
    b_modes = mode_noise(spec.noise, res.modes).realize(ens.drivers)
    bound = 1e-8 * (1.0 + np.abs(b_modes).reshape(len(ens), -1).max(axis=1))
    worst = max(worst, float((res.mode_residual / bound).max()))
    wall = time.perf_counter() - t0
    report(2, "FOC residual", worst <= 1.0 and wall <= 120,
           f"max residual / (1e-8 (1 + |b|_sup)) = {worst:.2e} (must be <= 1), {wall:.1f}s (limit 120s)")


def test_criterion_03_nash_gap():
    rng = np.random.default_rng(303)
    worst_z = -np.inf
    for _ in range(5):
        spec = _random_spec(rng, int(rng.integers(2, 5)), 24, noise="stochastic")
        ens = simulate(spec.noise, 1000, int(rng.integers(1 << 30)))
        res = solve_equilibrium(spec, ens)
        gap = nash_gap(spec, res, ens, n_probe=20, seed=int(rng.integers(1 << 30)))
        worst_z = max(worst_z, gap.max_z)
    det_max = -np.inf
    for _ in range(3):
        spec = _random_spec(rng, 3, 24)
        ens = simulate(spec.noise, 1, 0)
        res = solve_equilibrium(spec, ens)
        gap = nash_gap(spec, res, ens, n_probe=20, seed=int(rng.integers(1 << 30)))
        det_max = max(det_max, float(gap.gaps.max()))
    report(3, "Nash gap", worst_z <= 4.0 and det_max < 0.0,
           f"max improvement z-score {worst_z:.2f} (limit 4), deterministic max gap {det_max:.3e} (must be < 0)")


def test_criterion_04_step_graphon_equivalence():
    t0 = time.perf_counter()
    g = make_grid(1.0, 32)
    A, Bt = indicator_kernel(g, 0.5), indicator_kernel(g, 1.0)
    n_u = 16
    worst = 0.0
    for N in (2, 4, 8):
        rng = np.random.default_rng(N)
        w = np.triu(rng.uniform(size=(N, N)), 1)
        w = w + w.T
        fmodel = idiosyncratic_model(g, N, drift=1.0, sigma=1.0, common_sigma=0.3)
        r = n_u // N
        lab = NoiseModel(g, np.repeat(fmodel.drift, r, axis=0), np.repeat(fmodel.loadings, r, axis=0),
                         fmodel.driver_kinds, fmodel.common_mask)
        ens = simulate(fmodel, 200, 7)
        fres = solve_equilibrium(build_from_graph(A, Bt, 1.0, w, fmodel), ens)
        gspec = GraphonGameSpec(A, Bt, 1.0, step_graphon(w, n_u), lab)
        gres = solve_graphon(gspec, NoiseEnsemble(lab, 7, ens.path_ids, ens.drivers), energy_tol=0.0)
        worst = max(worst, float(np.abs(gres.field - np.repeat(fres.alpha, r, axis=1)).max()))
    wall = time.perf_counter() - t0
    report(4, "step-graphon equivalence", worst <= 1e-6 and wall <= 120,
           f"max pathwise sup difference {worst:.2e} (tol 1e-6), {wall:.1f}s (limit 120s)")


def test_criterion_05_spectral_invariants():
    rng = np.random.default_rng(505)
    ortho, bound_ok = 0.0, True
    graphons = [graphon_from_function(lambda u, v: u * v, 64),
                graphon_from_function(lambda u, v: 0.5 * (1 + u * v), 64),
                graphon_from_function(lambda u, v: np.minimum(u, v), 64)]
    for _ in range(5):
        x = rng.uniform(size=(48, 48))
        graphons.append(GraphonGrid(0.5 * (x + x.T)))
    for W in graphons:
        modes = spectral_decompose(W, energy_tol=0.0)
        gram = modes.phi @ modes.phi.T / modes.n_u
        ortho = max(ortho, float(np.abs(gram - np.eye(modes.rank)).max()))
        l2 = np.sqrt(np.mean(W.values ** 2))
        bound_ok &= bool(np.all(np.abs(modes.all_theta) <= l2 * (1 + 1e-12)))
    n_u = 256
    th1 = spectral_decompose(graphon_from_function(lambda u, v: u * v, n_u), 1e-12).theta
    thc = spectral_decompose(graphon_from_function(lambda u, v: 0.7 + 0 * u, n_u), 1e-12).theta
    err1 = abs(th1[0] - 1.0 / 3.0)
    errc = abs(thc[0] - 0.7)
    ok = ortho <= 1e-10 and bound_ok and th1.size == 1 and thc.size == 1 and max(err1, errc) <= 2.0 / n_u
    report(5, "spectral invariants", ok,
           f"orthonormality defect {ortho:.1e} (tol 1e-10), eigenvalue bound {'holds' if bound_ok else 'VIOLATED'}, "
           f"rank-1 error {err1:.2e} / constant error {errc:.2e} (tol {2.0 / n_u:.2e}); midpoint rank-1 value "
           f"{midpoint_rank_one_eigenvalue(n_u):.10f}")


def _star(K, R, dt):
    nt = K.shape[0]
    out = np.zeros_like(K)
    for j in range(nt):
        for k in range(nt):
            for m in range(nt):
                out[j, k] += dt * K[j, m] @ R[m, k]
    return out


def test_criterion_06_resolvent_identities():
    rng = np.random.default_rng(606)
    kernels = []
    for nt, n in ((16, 1), (24, 2), (12, 3), (32, 1)):
        g = make_grid(float(rng.uniform(0.5, 3.0)), nt)
        kernels.append(KernelGrid(g, random_volterra(rng, nt, n, 1.0), True))
    g = make_grid(2.0, 20)
    kernels += [indicator_kernel(g, 1.5), delay_measure_kernel(g, [0.0, 1.0], [1.0, -1.0]),
                exp_matrix_kernel(g, [[-1.0, 0.5], [0.0, -0.3]]), constant_kernel(g, 0.8, volterra=True)]
    worst = 0.0
    for K in kernels:
        R = volterra_resolvent(K).values
        defect = R + K.values - _star(K.values, R, K.grid.dt)
        worst = max(worst, float(np.abs(defect).max()))
    nt = 128
    g = make_grid(1.0, nt)
    c = 1.0
    R = volterra_resolvent(constant_kernel(g, c, volterra=True)).values[:, :, 0, 0]
    t, s = np.meshgrid(g.points, g.points, indexing="ij")
    exact = constant_resolvent_closed_form(c, t, s)
    mask = t > s
    rel = float((np.abs(R - exact)[mask] / np.abs(exact[mask])).max())
    report(6, "resolvent identities", worst <= 1e-10 and rel <= 5 * g.dt,
           f"max identity defect {worst:.1e} (tol 1e-10), closed-form relative error {rel:.2e} "
           f"(tol 5 dt = {5 * g.dt:.2e})")


def test_criterion_07_cut_norm_sandwich():
    rng = np.random.default_rng(707)
    violations = 0
    worst_upper = 0.0
    for q in range(100):
        N = int(rng.integers(1, 13))
        w = rng.uniform(-1, 1, (N, N))
        if q % 2:
            w = 0.5 * (w + w.T)
        cut = cut_norm_step(w)
        op = operator_norm_diff(w, 0.0)
        assert cut.exact
        if not (cut.value <= op * (1 + 1e-12) and op <= np.sqrt(8 * cut.value) * (1 + 1e-12)):
            violations += 1
        worst_upper = max(worst_upper, op / np.sqrt(8 * cut.value))
    report(7, "cut-norm sandwich", violations == 0,
           f"{violations} violations over 100 step kernels; max op / sqrt(8 cut) = {worst_upper:.3f}")


def test_criterion_08_sampling_coverage():
    t0 = time.perf_counter()
    n_u = 400
    W = graphon_from_function(lambda u, v: 0.5 * (1 + u * v), n_u)
    lines, ok = [], True
    for N in (50, 100):
        rho, _ = avella_bounds(N, 0.5, 1.0, 0.05, 1.0, "S2")
        hits = 0
        for r in range(200):
            seed = int(np.random.SeedSequence([808, N, r]).generate_state(1)[0])
            sg = sample(W, N, "S2", 1.0, seed)
            hits += operator_norm_diff(W, sg.step_kernel()) <= rho
        frac = hits / 200
        ok &= frac >= 0.95
        lines.append(f"N={N}: {frac:.3f} below rho={rho:.4f}")
    wall = time.perf_counter() - t0
    report(8, "sampling-bound coverage", ok and wall <= 180,
           "; ".join(lines) + f" (need >= 0.95), {wall:.1f}s (limit 180s)")


def test_criterion_09_convergence_envelope():
    t0 = time.perf_counter()
    g = make_grid(1.0, 64)
    A, Bt = indicator_kernel(g, 0.5), indicator_kernel(g, 1.0)
    n_u = 128
    W = graphon_from_function(lambda u, v: u * v, n_u)
    prob = ConvergenceProblem(A, Bt, 1.0, W, lipschitz_label_noise(g, n_u))
    given = run_given_sequence(prob, [4, 8, 16, 32], n_paths=2000, seed=909)
    lines = [f"given: errors {[f'{r.error:.2e}' for r in given.rows]}, K={given.K:.3g}, "
             f"violations={given.violations}, monotone={given.monotone}"]
    ok = given.violations == 0 and given.monotone
    n_s = 240
    Ws = graphon_from_function(lambda u, v: u * v, n_s)
    prob_s = ConvergenceProblem(A, Bt, 1.0, Ws, lipschitz_label_noise(g, n_s))
    for kind in ("S1", "S2", "S3", "S4"):
        run = run_sampled(prob_s, kind, [40, 60, 80, 120], kappa="log2", delta=0.05, n_rep=50, n_paths=500,
                          seed=919, L0=1.0, K0=1.0)
        means = [run.mean_error(N)[0] for N in run.N_values]
        good = run.monotone and run.coverage is not None and run.coverage >= 1 - 2 * 0.05
        ok &= good
        lines.append(f"{kind}: mean errors {[f'{m:.2e}' for m in means]}, coverage {run.coverage:.3f}, "
                     f"monotone={run.monotone}, skipped={len(run.skipped)}")
    wall = time.perf_counter() - t0
    report(9, "convergence envelope", ok and wall <= 900, "; ".join(lines) + f"; {wall:.0f}s (limit 900s)")


def _mc_match(inp, seed):
    game = volterra_reduce(inp)
    paths_a = game.simulate(1000, seed)
    paths_b = game.simulate(1000, seed + 1)
    alpha_a = solve_equilibrium(game.spec, paths_a.game).alpha
    alpha_b = solve_equilibrium(game.spec, paths_b.game).alpha
    direct = origin_objectives(game, alpha_b, paths_b)
    worst_z, worst_path = 0.0, 0.0
    for i in range(game.spec.N):
        red = game.objectives(alpha_a, paths_a, i)
        se = np.hypot(red.std(ddof=1), direct[:, i].std(ddof=1)) / np.sqrt(1000)
        worst_z = max(worst_z, abs(red.mean() - direct[:, i].mean()) / se if se > 0 else 0.0)
        # the Volterra-form costs reproduce the simulated dynamics path by path
        vol = game.direct_objectives(alpha_a, paths_a, i)
        same = origin_objectives(game, alpha_a, paths_a)[:, i]
        worst_path = max(worst_path, float(np.abs(vol - same).max() / (1 + np.abs(same).max())))
    return worst_z, worst_path


def test_criterion_10_example_families():
    rng = np.random.default_rng(1010)
    N, nt = 4, 32
    g = make_grid(1.0, nt)
    ext = extended_grid(g)
    w = rng.uniform(0, 1, (N, N))
    w /= 1.2 * w.sum(axis=1, keepdims=True)
    sys_inp = SystemicRiskInput(g, [(0.0, 1.0), (g.T / 2, -1.0)], w, 0.3, 1.0, 0.5, h=0.1,
                                V=idiosyncratic_model(ext, N, 0.0, 0.3, 0.2), xi=rng.uniform(size=N))
    Cf = np.array([[1.0, 0.2, -0.5], [0.2, 1.0, 0.1], [-0.5, 0.1, 1.0]])
    wn = rng.uniform(size=(N, N))
    wn = 0.5 * (wn + wn.T)
    families = {
        "systemic": systemic_risk_build(sys_inp),
        "network": network_sde_build(g, -0.5, 1.0, 0.8, wn, Cf, 0.5 * np.eye(2), xi=1.0, sigma=0.5),
        "simple-graph": simple_graph_build(g, N, [(0, 1), (1, 2), (2, 3)], 1.0, 0.5, 0.3, 0.5, 0.4,
                                           xi=[1.0, 0.0, -1.0, 0.5]),
    }
    lines, ok = [], True
    for k, (name, inp) in enumerate(families.items()):
        z, dpath = _mc_match(inp, 40 + 2 * k)
        ok &= z <= 3.0 and dpath <= 1e-9
        lines.append(f"{name}: |mean diff| = {z:.2f} se, same-path rel diff {dpath:.1e}")
    chk = systemic_assumption_check(sys_inp)
    kappa = sys_inp.kappa
    Kmat = np.diag(kappa) @ (2 * np.eye(N) - w - np.diag(np.diag(w)))
    frob = 2.0 / np.linalg.norm(Kmat, "fro")
    loop = critical_horizon(kappa, w)
    exact = chk.critical_T == frob and abs(chk.critical_T - loop) <= 1e-14 * loop
    below = systemic_assumption_check(sys_inp, T=chk.critical_T * (1 - 1e-9)).kappa_condition
    above = systemic_assumption_check(sys_inp, T=chk.critical_T * (1 + 1e-9)).kappa_condition
    ok &= exact and below and not above
    lines.append(f"critical T {chk.critical_T!r} vs Frobenius {frob!r} (loop {loop!r}); "
                 f"condition below/above: {below}/{above}")
    report(10, "example families", ok, "; ".join(lines))
