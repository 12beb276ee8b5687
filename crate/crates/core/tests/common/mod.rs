#![allow(dead_code)]

use pmflow::fvm::{build_grid, Boundary, Grid, PermeabilityField};
use pmflow::problem::{Problem, WellSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Log-uniform permeabilities spanning `decades` orders of magnitude.
pub fn random_perm(rng: &mut ChaCha8Rng, n: usize, decades: f64) -> PermeabilityField {
    PermeabilityField::new((0..n).map(|_| 10f64.powf(rng.random_range(-decades / 2.0..decades / 2.0))).collect()).unwrap()
}

pub fn square(n: usize, len: f64) -> Grid {
    build_grid(n, n, len, len).unwrap()
}

pub fn problem(grid: Grid, perm: PermeabilityField) -> Problem {
    let w = WellSet::default_for(&grid);
    Problem::new(grid, perm, w, Boundary::dirichlet(0.0)).unwrap()
}

/// max |a − b| / max |b|
pub fn rel_linf(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

use pmflow::geostats::{build_kl_basis, sample_field, GeostatConfig};
use pmflow::multi::ImpesSettings;
use pmflow::physics::{PhysicsKind, PhysicsModel};

/// Reference physics on an n×n grid over the 1 km square.
pub fn model(n: usize, kind: PhysicsKind, horizon: f64) -> PhysicsModel {
    let grid = square(n, 1000.0);
    PhysicsModel {
        kind,
        wells: WellSet::default_for(&grid),
        grid,
        boundary: Boundary::dirichlet(0.0),
        impes: ImpesSettings::default(),
        horizon,
        initial_saturation: 0.0,
    }
}

pub fn geostat(n: usize) -> GeostatConfig {
    let mut g = pmflow::config::RunConfig::default().geostat;
    g.n_modes = g.n_modes.min(n * n);
    g
}

/// `count` permeability realizations on the model grid.
pub fn fields(model: &PhysicsModel, count: usize, seed: u64) -> Vec<PermeabilityField> {
    let g = geostat(model.grid.nx);
    let basis = build_kl_basis(&model.grid, &g).unwrap();
    (0..count as u64).map(|i| sample_field(&basis, &g, seed + i).unwrap()).collect()
}

/// |a − b| / |b|
pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Independent IMPES on a uniform grid with all sides held at 0 Pa: dense LU
/// pressure, donor-cell upwinding, fixed uniform step. Returns the terminal
/// saturation.
pub fn reference_impes(
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    perm: &[f64],
    props: &pmflow::multi::FluidProps,
    q: &[f64],
    s0: &[f64],
    dt: f64,
    n_steps: usize,
) -> Vec<f64> {
    use nalgebra::{DMatrix, DVector};
    let (dx, dy) = (lx / nx as f64, ly / ny as f64);
    let n = nx * ny;
    let id = |i: usize, j: usize| j * nx + i;
    let mob = |s: f64| {
        let x = ((s - props.s_wc) / (1.0 - props.s_wc - props.s_nwr)).clamp(0.0, 1.0);
        (x * x / props.mu_w, (1.0 - x) * (1.0 - x) / props.mu_nw)
    };
    let frac = |s: f64| {
        let (w, o) = mob(s);
        w / (w + o)
    };
    // (cell a, Some(cell b) | None, half-distance ratio area/dist per side)
    let mut faces: Vec<(usize, Option<usize>, f64, f64)> = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let a = id(i, j);
            if i + 1 < nx {
                faces.push((a, Some(id(i + 1, j)), dy, dx));
            }
            if j + 1 < ny {
                faces.push((a, Some(id(i, j + 1)), dx, dy));
            }
            if i == 0 || i == nx - 1 {
                faces.push((a, None, dy, dx));
            }
            if j == 0 || j == ny - 1 {
                faces.push((a, None, dx, dy));
            }
        }
    }
    let mut s = s0.to_vec();
    let vol = dx * dy * props.porosity;
    for _ in 0..n_steps {
        let kl: Vec<f64> = (0..n).map(|c| perm[c] * (mob(s[c]).0 + mob(s[c]).1)).collect();
        let trans: Vec<f64> = faces
            .iter()
            .map(|&(a, b, area, d)| match b {
                Some(b) => area / (0.5 * d / kl[a] + 0.5 * d / kl[b]),
                None => area / (0.5 * d / kl[a]),
            })
            .collect();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for (&(a, b, _, _), &t) in faces.iter().zip(&trans) {
            m[(a, a)] += t;
            if let Some(b) = b {
                m[(b, b)] += t;
                m[(a, b)] -= t;
                m[(b, a)] -= t;
            }
        }
        let p = m.lu().solve(&DVector::from_column_slice(q)).unwrap();
        let mut ds: Vec<f64> = (0..n).map(|c| q[c].max(0.0) + frac(s[c]) * q[c].min(0.0)).collect();
        for (&(a, b, _, _), &t) in faces.iter().zip(&trans) {
            match b {
                Some(b) => {
                    let v = t * (p[a] - p[b]);
                    let w = if v >= 0.0 { frac(s[a]) } else { frac(s[b]) } * v;
                    ds[a] -= w;
                    ds[b] += w;
                }
                None => {
                    let v = t * p[a];
                    if v > 0.0 {
                        ds[a] -= frac(s[a]) * v;
                    }
                }
            }
        }
        for c in 0..n {
            s[c] += dt / vol * ds[c];
        }
    }
    s
}

use pmflow::surrogate::layers::*;
use pmflow::surrogate::{backward, forward, forward_raw, sigmoid, Architecture, NetworkParams};

pub fn rand_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// max |a − f| / max |f|
pub fn grad_err(analytic: &[f64], fd: &[f64]) -> f64 {
    rel_linf(analytic, fd)
}

/// Central differences of a scalar function, h = 1e-6.
pub fn fd_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = x[i];
            x[i] = x0 + h;
            let up = f(&x);
            x[i] = x0 - h;
            let down = f(&x);
            x[i] = x0;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst relative gradient error per layer kind, each through a random
/// linear probe of its output.
pub fn layer_gradchecks(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut out = Vec::new();

    let (c_in, h, w, c_out, k) = (3, 9, 8, 4, 3);
    let x = rand_vec(&mut r, c_in * h * w);
    let wt = rand_vec(&mut r, c_out * c_in * k * k);
    let b = rand_vec(&mut r, c_out);
    let probe = rand_vec(&mut r, c_out * (h - k + 1) * (w - k + 1));
    let (gi, gw, gb) = conv2d_backward(&x, c_in, h, w, &wt, c_out, k, &probe);
    let f = |x: &[f64], wt: &[f64], b: &[f64]| dot(&conv2d_forward(x, c_in, h, w, wt, b, c_out, k), &probe);
    let e = grad_err(&gi, &fd_grad(&x, |v| f(v, &wt, &b)))
        .max(grad_err(&gw, &fd_grad(&wt, |v| f(&x, v, &b))))
        .max(grad_err(&gb, &fd_grad(&b, |v| f(&x, &wt, v))));
    out.push(("conv2d", e));

    // distinct values keep the argmax away from ties
    let mut x: Vec<f64> = (0..2 * 6 * 6).map(|i| i as f64 * 0.01).collect();
    for i in (1..x.len()).rev() {
        x.swap(i, r.random_range(0..=i));
    }
    let probe = rand_vec(&mut r, 2 * 3 * 3);
    let (_, arg) = maxpool2_forward(&x, 2, 6, 6);
    let g = maxpool2_backward(&probe, &arg, x.len());
    out.push(("maxpool2", grad_err(&g, &fd_grad(&x, |v| dot(&maxpool2_forward(v, 2, 6, 6).0, &probe)))));

    let x = rand_vec(&mut r, 7);
    let wt = rand_vec(&mut r, 5 * 7);
    let b = rand_vec(&mut r, 5);
    let probe = rand_vec(&mut r, 5);
    let (gx, gw, gb) = dense_backward(&x, &wt, &probe);
    let e = grad_err(&gx, &fd_grad(&x, |v| dot(&dense_forward(v, &wt, &b), &probe)))
        .max(grad_err(&gw, &fd_grad(&wt, |v| dot(&dense_forward(&x, v, &b), &probe))))
        .max(grad_err(&gb, &fd_grad(&b, |v| dot(&dense_forward(&x, &wt, v), &probe))));
    out.push(("dense", e));

    let z: Vec<f64> = rand_vec(&mut r, 20).into_iter().map(|v| if v.abs() < 0.05 { v + 0.1 } else { v }).collect();
    let probe = rand_vec(&mut r, 20);
    out.push(("relu", grad_err(&relu_backward(&z, &probe), &fd_grad(&z, |v| dot(&relu(v), &probe)))));

    let xs: Vec<f64> = rand_vec(&mut r, 10).into_iter().map(|v| 8.0 * v).collect();
    let a: Vec<f64> = xs.iter().map(|v| sigmoid(*v)).collect();
    let fd: Vec<f64> = xs.iter().map(|&v| fd_grad(&[v], |y| pmflow::surrogate::softplus(y[0]))[0]).collect();
    out.push(("softplus", grad_err(&a, &fd)));
    out
}

/// Whole-network check: d rate / d θ and d rate / d input against central
/// differences. Returns the worst per-tensor relative error.
pub fn network_gradcheck(arch: Architecture, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut params = NetworkParams::init(arch, seed).unwrap();
    // nonzero biases so no unit sits exactly on a kink
    for t in [1, 3, 5, 7, 9] {
        for v in params.tensor_mut(t) {
            *v = r.random_range(0.05..0.3);
        }
    }
    let input = rand_vec(&mut r, arch.input * arch.input);
    let scale = 0.03;
    let cache = forward_raw(&params, &input).unwrap();
    let (g, gin) = backward(&params, &cache, sigmoid(cache.raw) * scale);
    let mut worst = grad_err(&gin, &fd_grad(&input, |v| forward(&params, v, scale).unwrap()));
    for t in 0..10 {
        let fd = fd_grad(params.tensor(t), |v| {
            let mut p = params.clone();
            p.tensor_mut(t).copy_from_slice(v);
            forward(&p, &input, scale).unwrap()
        });
        worst = worst.max(grad_err(g.tensor(t), &fd));
    }
    worst
}

/// A small variant of the network on an 8×8 input.
pub const TINY: Architecture = Architecture { input: 8, kernel: 2, c1: 2, c2: 3, hidden1: 4, hidden2: 3 };

use pmflow::training::{TrainingConfig, Trainer};

/// Small training setup: 8×8 grid, tiny network.
pub fn tiny_trainer(kind: PhysicsKind, variance: f64, cfg: TrainingConfig) -> Trainer {
    let m = model(8, kind, 2e5);
    let g = GeostatConfig { variance, ..geostat(8) };
    Trainer::new(cfg, m, g, TINY).unwrap()
}

pub fn small_config() -> TrainingConfig {
    TrainingConfig {
        learning_rate: 1e-3,
        n_batches: 3,
        samples_per_batch: 4,
        samples_per_epoch: 12,
        epochs_pretrain: 3,
        epochs_finetune: 2,
        target_pressure: 0.0,
        validation_size: 8,
        seed: 11,
    }
}

/// One random IMPES step; returns (min s, max s, balance error / throughput).
pub fn random_impes_step(r: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let n = r.random_range(6..=10);
    let grid = square(n, r.random_range(10.0..1000.0));
    let nc = grid.n_cells();
    let pr = problem(grid.clone(), random_perm(r, nc, 3.0));
    let props = pmflow::multi::FluidProps {
        mu_w: r.random_range(0.2..5.0),
        mu_nw: r.random_range(0.2..5.0),
        s_wc: r.random_range(0.0..0.2),
        s_nwr: r.random_range(0.0..0.2),
        porosity: r.random_range(0.05..1.0),
        rho_w: 1.0,
    };
    let lo = props.s_wc;
    let hi = 1.0 - props.s_nwr;
    let sat = pmflow::multi::SaturationField::new((0..nc).map(|_| r.random_range(lo..=hi)).collect()).unwrap();
    let q = r.random_range(0.0..2.0) * pr.wells.injection_rate;
    let (_, v) = pmflow::multi::impes_pressure_step(&pr, &props, &sat, q).unwrap();
    let src = pr.wells.sources(nc, q);
    let cfl = r.random_range(0.05..=1.0);
    let dt = pmflow::multi::cfl_timestep(&grid, &v, &src, &props, cfl, f64::INFINITY);
    assert!(dt > 0.0 && dt.is_finite());
    let next = pmflow::multi::saturation_step(&sat, &v, &src, dt, &grid, &props).unwrap();

    let f = |s: f64| pmflow::multi::fractional_flow(s, &props).unwrap();
    let mut wet_in: f64 = src.values.iter().zip(&sat.values).map(|(&qi, &s)| qi.max(0.0) + f(s) * qi.min(0.0)).sum();
    let mut scale: f64 = src.values.iter().map(|x| x.abs()).sum();
    for (fc, &flux) in grid.faces().iter().zip(&v.values) {
        if let pmflow::fvm::Neighbor::Boundary(_) = fc.neighbor {
            // entering fluid carries saturation 0, which is f = 0
            wet_in -= if flux > 0.0 { f(sat.values[fc.a]) * flux } else { 0.0 };
            scale += flux.abs();
        }
    }
    let stored: f64 = next.values.iter().zip(&sat.values).map(|(a, b)| a - b).sum::<f64>() * props.porosity * grid.cell_volume;
    let err = (stored - dt * wet_in).abs() / (dt * scale);
    let min = next.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = next.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max, err)
}

