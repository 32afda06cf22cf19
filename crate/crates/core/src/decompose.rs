//! Constructive decompositions driven by length and thickness: the
//! capped-mass recursion on a cube, the single `g + h` split, its
//! iteration, and the scale-by-scale stopping-time decomposition of bad
//! Calderón–Zygmund pieces.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::content::{critical_thickness, length, thickness, ContentParams};
use crate::czd::interval_index;
use crate::dilation::{dilate_grid, DilationGroup};
use crate::dyadic::{cell_ancestor, side_pow, Cell, CubeCollection, DyadicCube, GridFunction};
use crate::error::{invalid, invariant, Error, Result};
use crate::numeric::{exact_split, sums_exactly_to, CompensatedSum};

const REL: f64 = 1e-9;

/// Achieved constants, the pieces, and what is left over.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecompositionCertificate {
    pub constants: BTreeMap<String, f64>,
    pub pieces: Vec<GridFunction>,
    pub residual: GridFunction,
}

impl DecompositionCertificate {
    fn new(pieces: Vec<GridFunction>, residual: GridFunction) -> Self {
        Self {
            constants: BTreeMap::new(),
            pieces,
            residual,
        }
    }

    fn set(&mut self, key: &str, value: f64) {
        self.constants.insert(key.to_string(), value);
    }

    /// Whether pieces and residual add up to `target` exactly in every cell.
    pub fn reconstructs(&self, target: &GridFunction) -> bool {
        let all: Vec<&GridFunction> = self
            .pieces
            .iter()
            .chain(std::iter::once(&self.residual))
            .collect();
        let res = all
            .iter()
            .map(|g| g.resolution())
            .max()
            .unwrap_or(target.resolution())
            .max(target.resolution());
        let refine = |g: &GridFunction| g.refine(res).ok();
        let Some(t) = refine(target) else {
            return false;
        };
        let parts: Option<Vec<GridFunction>> = all.iter().map(|g| refine(g)).collect();
        let Some(parts) = parts else { return false };
        let mut cells: BTreeSet<Cell> = t.iter().map(|(c, _)| c.clone()).collect();
        for p in &parts {
            cells.extend(p.iter().map(|(c, _)| c.clone()));
        }
        cells.iter().all(|c| {
            let vals: Vec<f64> = parts.iter().map(|p| p.get(c)).collect();
            sums_exactly_to(&vals, t.get(c))
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CappedMasses {
    pub v_i: GridFunction,
    pub collection: CubeCollection,
}

/// Builds `v_I <= v χ_I` with `Θ_n[v_I] <= 2γ` by capping masses bottom-up:
/// a level-`n` cell or an internal cube whose (already capped) mass exceeds
/// `2γ l^β` is scaled down to exactly that mass and joins `𝒬[I]`.
pub fn cap_masses(
    v: &GridFunction,
    cube: &DyadicCube,
    gamma: f64,
    p: &ContentParams,
) -> Result<CappedMasses> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid("gamma must be positive"));
    }
    if !v.is_nonnegative() {
        return Err(invalid("v must be nonnegative"));
    }
    if cube.level > p.n {
        return Err(invalid("cube finer than 2^-n"));
    }
    if cube.dim() != v.dim() {
        return Err(invalid("dimension mismatch"));
    }
    let res = v.resolution().max(p.n).max(cube.level);
    let v = v.restrict_to_cube(cube)?.refine(res)?;
    let v = if v.root().contains(cube) {
        v
    } else {
        v.with_root(cube.clone())?
    };
    let cap = |level: i32| 2.0 * gamma * side_pow(level, p.beta);

    // levels[0] is level n; each entry holds (capped mass, factor).
    let depth = (p.n - cube.level) as usize;
    let mut levels: Vec<BTreeMap<Cell, (f64, f64)>> = Vec::with_capacity(depth + 1);
    let leaf_cap = cap(p.n);
    levels.push(
        v.abs_masses(p.n)
            .into_iter()
            .filter(|(c, _)| cell_ancestor(c, depth as u32) == cube.coords)
            .map(|(c, m)| {
                if m > leaf_cap {
                    (c, (leaf_cap, leaf_cap / m))
                } else {
                    (c, (m, 1.0))
                }
            })
            .collect(),
    );
    for i in 1..=depth {
        let level = p.n - i as i32;
        let mut sums: BTreeMap<Cell, CompensatedSum> = BTreeMap::new();
        for (c, (m, _)) in &levels[i - 1] {
            sums.entry(cell_ancestor(c, 1)).or_default().add(*m);
        }
        let c_level = cap(level);
        levels.push(
            sums.into_iter()
                .map(|(c, s)| {
                    let m = s.value();
                    if m > c_level {
                        (c, (c_level, c_level / m))
                    } else {
                        (c, (m, 1.0))
                    }
                })
                .collect(),
        );
    }

    // Top-down: cumulative factors and the topmost capped cubes.
    let mut factor: BTreeMap<Cell, (f64, bool)> = BTreeMap::new();
    let mut collection = Vec::new();
    for (c, (_, t)) in &levels[depth] {
        if *t < 1.0 {
            collection.push(DyadicCube::new(cube.level, c.clone()));
        }
        factor.insert(c.clone(), (*t, *t < 1.0));
    }
    for i in (0..depth).rev() {
        let level = p.n - i as i32;
        let mut next = BTreeMap::new();
        for (c, (_, t)) in &levels[i] {
            let (up, covered) = factor[&cell_ancestor(c, 1)];
            if *t < 1.0 && !covered {
                collection.push(DyadicCube::new(level, c.clone()));
            }
            next.insert(c.clone(), (up * t, covered || *t < 1.0));
        }
        factor = next;
    }

    let k = (res - p.n) as u32;
    let cells: Vec<(Cell, f64)> = v
        .iter()
        .map(|(c, x)| {
            (
                c.clone(),
                x * factor.get(&cell_ancestor(c, k)).map(|f| f.0).unwrap_or(1.0),
            )
        })
        .collect();
    let v_i = GridFunction::from_cells(v.root().clone(), res, cells)?;
    let collection = CubeCollection::new(collection);

    // Domination, thickness cap and mass lower bound, checked at runtime.
    for (c, x) in v_i.iter() {
        if *x < 0.0 || *x > v.get(c) {
            return Err(invariant("capped function exceeds v"));
        }
    }
    let th = thickness(&v_i, p)?;
    if th > 2.0 * gamma * (1.0 + 1e-10) {
        return Err(invariant(format!(
            "capped thickness {th} above 2γ = {}",
            2.0 * gamma
        )));
    }
    let uncovered: f64 = v
        .abs_masses(p.n)
        .iter()
        .filter(|(c, _)| !collection.covers_cell(p.n, c))
        .map(|(_, m)| m)
        .sum();
    let rhs = 2.0 * gamma * collection.total_side(p.beta) + uncovered;
    if 2.0 * v_i.integral() < rhs * (1.0 - 1e-10) {
        return Err(invariant("capped mass too small"));
    }
    Ok(CappedMasses { v_i, collection })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Split {
    pub g: GridFunction,
    pub h: GridFunction,
    pub certificate: DecompositionCertificate,
}

/// `v = g + h` with `Λ_n[h] <= ½Λ_n[v]` and `Λ_n[v] Θ_n[g] <= 8∫g`.
pub fn split_once(v: &GridFunction, q: &DyadicCube, p: &ContentParams) -> Result<Split> {
    if !v.is_nonnegative() {
        return Err(invalid("v must be nonnegative"));
    }
    if q.level > p.n {
        return Err(invalid("q finer than 2^-n"));
    }
    let res = v.resolution().max(p.n);
    let v = v.refine(res)?.with_root(q.clone())?;
    if !(v.integral() > 0.0) {
        return Err(Error::Degenerate("∫v = 0".into()));
    }
    let theta = critical_thickness(&v, p)?;
    let capped = cap_masses(&v, q, theta.theta, p)?;
    let k = (res - p.n) as u32;
    let mut g_cells = Vec::new();
    let mut h_cells = Vec::new();
    for (c, x) in v.iter() {
        if theta.in_residual(p.n, &cell_ancestor(c, k)) {
            g_cells.push((c.clone(), *x));
        } else {
            let (gp, hp) = exact_split(*x, capped.v_i.get(c));
            g_cells.push((c.clone(), gp));
            h_cells.push((c.clone(), hp));
        }
    }
    let g = GridFunction::from_cells(q.clone(), res, g_cells)?;
    let h = GridFunction::from_cells(q.clone(), res, h_cells)?;

    let lam_v = theta.length;
    let lam_h = length(&h, p)?;
    let th_g = thickness(&g, p)?;
    let int_g = g.integral();
    if lam_h > 0.5 * lam_v * (1.0 + 1e-12) {
        return Err(invariant(format!(
            "Λ[h] = {lam_h} above ½Λ[v] = {}",
            0.5 * lam_v
        )));
    }
    if lam_v * th_g > 8.0 * int_g * (1.0 + REL) {
        return Err(invariant(format!(
            "ΛΘ[g] = {} above 8∫g = {}",
            lam_v * th_g,
            8.0 * int_g
        )));
    }
    let mut cert = DecompositionCertificate::new(vec![g.clone()], h.clone());
    cert.set("theta", theta.theta);
    cert.set("length_v", lam_v);
    cert.set("length_ratio", lam_h / lam_v);
    cert.set(
        "thickness_product_ratio",
        if int_g > 0.0 {
            lam_v * th_g / int_g
        } else {
            0.0
        },
    );
    if !cert.reconstructs(&v) {
        return Err(invariant("g + h differs from v"));
    }
    Ok(Split {
        g,
        h,
        certificate: cert,
    })
}

/// The split applied to `|h|` with the sign of `h` reattached.
fn signed_split(
    h: &GridFunction,
    q: &DyadicCube,
    p: &ContentParams,
) -> Result<(GridFunction, GridFunction, f64)> {
    let split = split_once(&h.abs(), q, p)?;
    let sign = |g: &GridFunction| {
        let cells: Vec<(Cell, f64)> = g
            .iter()
            .map(|(c, x)| (c.clone(), if h.get(c) < 0.0 { -x } else { *x }))
            .collect();
        GridFunction::from_cells(g.root().clone(), g.resolution(), cells)
    };
    Ok((
        sign(&split.g)?,
        sign(&split.h)?,
        split.certificate.constants["thickness_product_ratio"],
    ))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Iteration {
    /// `g_1, …` (including the absorbing `g_{m+1} = h_m` when `m >= n`).
    pub pieces: Vec<GridFunction>,
    pub residual: GridFunction,
    /// `Λ_n[h_ν]` for `ν = 0, 1, …`.
    pub lengths: Vec<f64>,
    pub absorbed: bool,
    pub certificate: DecompositionCertificate,
}

/// `f = Σ g_ν + h_m` by repeated splitting of `|h_{ν−1}|`; when `m >= n`
/// the residual is absorbed as `g_{m+1}`.
pub fn iterate_split(f: &GridFunction, p: &ContentParams, m: usize) -> Result<Iteration> {
    if f.root().level != 0 {
        return Err(invalid("iteration needs a root cube of sidelength 1"));
    }
    if m == 0 {
        return Err(invalid("m must be at least 1"));
    }
    let q = f.root().clone();
    let res = f.resolution().max(p.n);
    let f = f.refine(res)?;
    let lam_f = length(&f, p)?;
    let mut h = f.clone();
    let mut pieces = Vec::new();
    let mut lengths = vec![lam_f];
    let mut worst_ii = 0.0f64;
    for nu in 1..=m {
        let (g, next) = if h.is_zero() {
            (h.clone(), h.clone())
        } else {
            let (g, next, _) = signed_split(&h, &q, p)?;
            (g, next)
        };
        let lam_prev = lengths[nu - 1];
        let int_g = g.l1_norm();
        if int_g > 0.0 {
            let r = thickness(&g, p)? * lam_prev / int_g;
            worst_ii = worst_ii.max(r);
        }
        let lam = length(&next, p)?;
        if lam > lam_f * (-(nu as f64)).exp2() * (1.0 + 1e-12) {
            return Err(invariant(format!("Λ[h_{nu}] = {lam} above 2^-ν Λ[f]")));
        }
        lengths.push(lam);
        pieces.push(g);
        h = next;
    }
    let absorbed = m as i32 >= p.n;
    if absorbed {
        let int_h = h.l1_norm();
        if int_h > 0.0 {
            let r = thickness(&h, p)? * lengths[m] / int_h;
            if r > 1.0 + 1e-12 {
                return Err(invariant("residual not inside a single level-n cube"));
            }
            worst_ii = worst_ii.max(r);
        }
        pieces.push(h);
        h = GridFunction::zeros(q.clone(), res)?;
        lengths.push(0.0);
    }
    if worst_ii > 8.0 * (1.0 + REL) {
        return Err(invariant(format!(
            "Θ[g_ν]Λ[h_ν−1]/∫|g_ν| reached {worst_ii}"
        )));
    }
    for (g, c) in pieces
        .iter()
        .flat_map(|g| g.iter().map(move |(c, x)| (x, c)))
    {
        if *g != 0.0 && g.signum() != f.get(c).signum() {
            return Err(invariant("piece sign differs from f"));
        }
    }
    let mut cert = DecompositionCertificate::new(pieces.clone(), h.clone());
    cert.set("length_f", lam_f);
    cert.set("max_thickness_length_ratio", worst_ii);
    cert.set(
        "final_length_ratio",
        if lam_f > 0.0 { lengths[m] / lam_f } else { 0.0 },
    );
    if !cert.reconstructs(&f) {
        return Err(invariant("pieces do not add up to f"));
    }
    Ok(Iteration {
        pieces,
        residual: h,
        lengths,
        absorbed,
        certificate: cert,
    })
}

/// One bad piece `b^n_w` tagged with its Whitney scale `r(w)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaggedPiece {
    pub scale: i64,
    pub b: GridFunction,
}

/// `f^{n,κ}_w`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KappaPiece {
    pub region: usize,
    pub kappa: i64,
    pub f: GridFunction,
}

/// Stopping indices of one step of the construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoppingStep {
    pub kappa: i64,
    /// `(unit cube, L)` for every unit cube meeting the dilated support.
    pub stops: Vec<(Vec<i64>, usize)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoppingDecomposition {
    pub n: i32,
    pub l: i64,
    pub alpha: f64,
    pub kappa_max: i64,
    pub kappa_min: i64,
    pub pieces: Vec<KappaPiece>,
    pub steps: Vec<StoppingStep>,
    pub max_stopping_index: usize,
    /// Largest `Θ_n[g_ν] / α` over all split pieces.
    pub max_step_thickness: f64,
    /// Largest `α Λ_n[H(δ_κ·)χ_q] / ∫|H(δ_κ·)χ_q|`.
    pub max_length_ratio: f64,
    /// Largest `Θ_n[(H+S)(δ_{κ+s}·)χ_q] / (16(n+1)α)`.
    pub max_thickness_ratio: f64,
    /// `Θ_n[𝒢^0(δ_{κ_max}·)χ_q] / α`, never split.
    pub initial_thickness: f64,
}

impl StoppingDecomposition {
    pub fn piece(&self, region: usize, kappa: i64) -> Option<&GridFunction> {
        self.pieces
            .iter()
            .find(|p| p.region == region && p.kappa == kappa)
            .map(|p| &p.f)
    }
}

/// Splits a function into its restrictions to the integer unit cubes.
fn unit_pieces(f: &GridFunction) -> Result<Vec<(DyadicCube, GridFunction)>> {
    let res = f.resolution();
    if res < 0 {
        return Err(invalid("grid coarser than unit cubes"));
    }
    let mut groups: BTreeMap<Cell, Vec<(Cell, f64)>> = BTreeMap::new();
    for (c, x) in f.iter() {
        groups
            .entry(cell_ancestor(c, res as u32))
            .or_default()
            .push((c.clone(), *x));
    }
    groups
        .into_iter()
        .map(|(q, cells)| {
            let cube = DyadicCube::new(0, q);
            Ok((cube.clone(), GridFunction::from_cells(cube, res, cells)?))
        })
        .collect()
}

/// The scale-by-scale stopping-time decomposition
/// `b^n_w = Σ_{κ ∈ (I^n_l)^*} f^{n,κ}_w`.
pub fn stopping_decomposition(
    pieces: &[TaggedPiece],
    n: i32,
    l: i64,
    alpha: f64,
    dil: &DilationGroup,
) -> Result<StoppingDecomposition> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid("alpha must be positive"));
    }
    let (range, star) = interval_index(n as i64, l, dil)?;
    let kappa_max = *star.end();
    let kappa_min = *star.start();
    for t in pieces {
        if !range.contains(&t.scale) {
            return Err(invalid(format!(
                "r(w) = {} outside [{}, {})",
                t.scale, range.start, range.end
            )));
        }
    }
    let exps = dil
        .integer_exponents()
        .ok_or_else(|| invalid("stopping decomposition needs integer exponents"))?;
    let p = ContentParams::new(n);
    if pieces.is_empty() {
        return Ok(StoppingDecomposition {
            n,
            l,
            alpha,
            kappa_max,
            kappa_min,
            pieces: vec![],
            steps: vec![],
            max_stopping_index: 0,
            max_step_thickness: 0.0,
            max_length_ratio: 0.0,
            max_thickness_ratio: 0.0,
            initial_thickness: 0.0,
        });
    }

    // Common frame, fine enough that every dilate in (I^n_l)^* resolves 2^-n.
    let mut total = pieces[0].b.clone();
    for t in &pieces[1..] {
        total = total.add(&t.b)?;
    }
    let pmin = *exps.iter().min().unwrap();
    let r_star = total
        .resolution()
        .max(n as i32)
        .max((n as i64 - kappa_min.min(0) * pmin) as i32);
    let root = total.root().clone();
    let mut owner: BTreeMap<Cell, usize> = BTreeMap::new();
    let mut g0_cells = Vec::new();
    for (i, t) in pieces.iter().enumerate() {
        let b = t.b.with_root(root.clone())?.refine(r_star)?;
        for (c, x) in b.iter() {
            if *x == 0.0 {
                continue;
            }
            if owner.insert(c.clone(), i).is_some() {
                return Err(invalid("bad pieces overlap"));
            }
            g0_cells.push((c.clone(), *x));
        }
    }
    let g0 = GridFunction::from_cells(root.clone(), r_star, g0_cells)?;
    let scale_of = |c: &Cell| pieces[owner[c]].scale;

    let mut initial_thickness = 0.0f64;
    for (_, u) in unit_pieces(&dilate_grid(&g0, kappa_max, dil)?)? {
        initial_thickness = initial_thickness.max(thickness(&u, &p)? / alpha);
    }

    // hs[j], ss[j]: H^j and S^j in the common frame.
    let zero = GridFunction::zeros(root.clone(), r_star)?;
    let mut hs = vec![zero.clone()];
    let mut ss = vec![zero.clone()];
    let mut g_prev = g0.clone();
    let mut steps = Vec::new();
    let mut max_l = 0usize;
    let mut max_step = 0.0f64;
    let mut j = 1i64;
    while kappa_max - j >= kappa_min && !g_prev.is_zero() {
        let kappa = kappa_max - j;
        let s = g_prev.filter_cells(|c| scale_of(&c.to_vec()) == kappa);
        let rest = g_prev.filter_cells(|c| scale_of(&c.to_vec()) < kappa);
        if g_prev.iter().any(|(c, _)| scale_of(c) > kappa) {
            return Err(invariant("mass left on a scale above the current κ"));
        }
        let dilated = dilate_grid(&rest, kappa, dil)?;
        let dres = dilated.resolution();
        let mut stops = Vec::new();
        let mut h_final: BTreeMap<Cell, GridFunction> = BTreeMap::new();
        for (q, u) in unit_pieces(&dilated)? {
            let mut h = u;
            let mut steps_taken = 0usize;
            loop {
                let lam = length(&h, &p)?;
                if alpha * lam - h.l1_norm() <= 1e-12 * alpha {
                    break;
                }
                let g = if steps_taken as i32 == n {
                    let g = h.clone();
                    h = GridFunction::zeros(q.clone(), dres)?;
                    g
                } else {
                    let (g, next, _) = signed_split(&h, &q, &p)?;
                    h = next;
                    g
                };
                steps_taken += 1;
                let th = thickness(&g, &p)? / alpha;
                max_step = max_step.max(th);
                if th > 8.0 * (1.0 + REL) {
                    return Err(invariant(format!("split piece has thickness {th}α")));
                }
            }
            if steps_taken as i32 > n + 1 {
                return Err(invariant("stopping index exceeds n + 1"));
            }
            max_l = max_l.max(steps_taken);
            stops.push((q.coords.clone(), steps_taken));
            h_final.insert(q.coords.clone(), h);
        }
        // H^j(x) = h_L(δ_{−κ}x); G^j is the exact remainder.
        let mut h_cells = Vec::new();
        let mut g_cells = Vec::new();
        for (c, x) in rest.iter() {
            let d: Cell = c
                .iter()
                .zip(&exps)
                .map(|(ci, pi)| ci << (dres as i64 - r_star as i64 - kappa * pi))
                .collect();
            let q = cell_ancestor(&d, dres as u32);
            let part = h_final.get(&q).map(|h| h.get(&d)).unwrap_or(0.0);
            let (hp, gp) = exact_split(*x, part);
            h_cells.push((c.clone(), hp));
            g_cells.push((c.clone(), gp));
        }
        hs.push(GridFunction::from_cells(root.clone(), r_star, h_cells)?);
        ss.push(s);
        g_prev = GridFunction::from_cells(root.clone(), r_star, g_cells)?;
        steps.push(StoppingStep { kappa, stops });
        j += 1;
    }
    if !g_prev.is_zero() {
        return Err(invariant("mass left after the smallest scale"));
    }

    // Case table: f^{n,κ}_w = (H^j + S^j)χ_w with j = κ_max − κ.
    let mut out = Vec::new();
    for (j, (h, s)) in hs.iter().zip(&ss).enumerate() {
        let kappa = kappa_max - j as i64;
        let mut per: BTreeMap<usize, Vec<(Cell, f64)>> = BTreeMap::new();
        for (c, x) in h.iter().chain(s.iter()) {
            if *x != 0.0 {
                per.entry(owner[c]).or_default().push((c.clone(), *x));
            }
        }
        for (region, cells) in per {
            out.push(KappaPiece {
                region,
                kappa,
                f: GridFunction::from_cells(root.clone(), r_star, cells)?,
            });
        }
    }

    // Σ_κ |f^{n,κ}_w| = |b^n_w| in every cell.
    let mut by_cell: BTreeMap<&Cell, Vec<f64>> = BTreeMap::new();
    for kp in &out {
        for (c, x) in kp.f.iter() {
            by_cell.entry(c).or_default().push(x.abs());
        }
    }
    for (c, x) in g0.iter() {
        let parts = by_cell.remove(c).unwrap_or_default();
        if !sums_exactly_to(&parts, x.abs()) {
            return Err(invariant("absolute values of the pieces do not add up"));
        }
    }
    if !by_cell.is_empty() {
        return Err(invariant("pieces outside the support of the bad function"));
    }

    // Length and thickness bounds per step.
    let mut max_length_ratio = 0.0f64;
    let mut max_thickness_ratio = 0.0f64;
    let bound = 16.0 * (n as f64 + 1.0) * alpha;
    for (j, (h, s)) in hs.iter().zip(&ss).enumerate() {
        let kappa = kappa_max - j as i64;
        if !h.is_zero() {
            for (_, u) in unit_pieces(&dilate_grid(h, kappa, dil)?)? {
                let lam = length(&u, &p)?;
                let int = u.l1_norm();
                if alpha * lam - int > 1e-12 * alpha + 1e-12 * int {
                    return Err(invariant(format!("length bound fails at κ = {kappa}")));
                }
                if int > 0.0 {
                    max_length_ratio = max_length_ratio.max(alpha * lam / int);
                }
            }
        }
        let hs_sum = h.add(s)?;
        if hs_sum.is_zero() {
            continue;
        }
        for k2 in kappa + 1..=kappa_max {
            for (_, u) in unit_pieces(&dilate_grid(&hs_sum, k2, dil)?)? {
                let th = thickness(&u, &p)?;
                max_thickness_ratio = max_thickness_ratio.max(th / bound);
                if th > bound * (1.0 + REL) {
                    return Err(invariant(format!(
                        "thickness bound fails at κ = {kappa}, s = {}",
                        k2 - kappa
                    )));
                }
            }
        }
    }

    Ok(StoppingDecomposition {
        n,
        l,
        alpha,
        kappa_max,
        kappa_min,
        pieces: out,
        steps,
        max_stopping_index: max_l,
        max_step_thickness: max_step,
        max_length_ratio,
        max_thickness_ratio,
        initial_thickness,
    })
}

/// Random one-dimensional bad pieces: disjoint dyadic intervals `w` of
/// length `2^{r(w)}`, `r(w) ∈ [ln, (l+1)n)`, inside `[0, 2^{-root_level})`,
/// carrying mean-zero values bounded by `2^{cn+1}α`.
pub fn random_bad_pieces<R: Rng>(
    rng: &mut R,
    n: i32,
    l: i64,
    alpha: f64,
    c: f64,
    count: usize,
    root_level: i32,
    resolution: i32,
) -> Result<Vec<TaggedPiece>> {
    let lo = l * n as i64;
    let hi = (l + 1) * n as i64 - 1;
    let block = hi; // blocks of length 2^hi hold one interval each
    let root = DyadicCube::new(root_level, vec![0]);
    let blocks = (-(root_level as i64) - block).max(0);
    let nblocks = 1i64 << blocks;
    if (count as i64) > nblocks {
        return Err(invalid("too many intervals for the root"));
    }
    if resolution as i64 + lo < 0 {
        return Err(invalid("resolution too coarse for the smallest interval"));
    }
    let mut slots: Vec<i64> = (0..nblocks).collect();
    for i in 0..count {
        let k = rng.gen_range(i..slots.len());
        slots.swap(i, k);
    }
    let amp = (c * n as f64).exp2() * alpha;
    let mut out = Vec::new();
    for &slot in &slots[..count] {
        let r = rng.gen_range(lo..=hi);
        // first interval of length 2^r inside block `slot`
        let cells_per = 1i64 << (resolution as i64 + r);
        let start = slot << (resolution as i64 + block);
        let raw: Vec<f64> = (0..cells_per).map(|_| rng.gen_range(-amp..amp)).collect();
        let mean = raw.iter().sum::<f64>() / cells_per as f64;
        let cells: Vec<(Cell, f64)> = raw
            .iter()
            .enumerate()
            .map(|(i, x)| (vec![start + i as i64], x - mean))
            .collect();
        out.push(TaggedPiece {
            scale: r,
            b: GridFunction::from_cells(root.clone(), resolution, cells)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit1() -> DyadicCube {
        DyadicCube::unit(1)
    }

    fn random_nonneg(rng: &mut ChaCha8Rng, d: usize, res: i32, count: usize) -> GridFunction {
        let side = 1i64 << res;
        let cells: Vec<(Cell, f64)> = (0..count)
            .map(|_| {
                (
                    (0..d).map(|_| rng.gen_range(0..side)).collect(),
                    rng.gen_range(0.0..4.0),
                )
            })
            .collect();
        GridFunction::from_cells(DyadicCube::unit(d), res, cells).unwrap()
    }

    #[test]
    fn cap_masses_examples() {
        let v = GridFunction::indicator(unit1(), 1, &DyadicCube::new(1, vec![0]), 1.0).unwrap();
        let out = cap_masses(&v, &unit1(), 1.0, &ContentParams::new(1)).unwrap();
        assert_eq!(out.v_i, v);
        assert!(out.collection.is_empty());

        // One overloaded leaf: mass 4γ·2^-n at n = 2, γ = 1.
        let v = GridFunction::from_cells(unit1(), 2, vec![(vec![1], 4.0)]).unwrap();
        let out = cap_masses(&v, &unit1(), 1.0, &ContentParams::new(2)).unwrap();
        assert_eq!(out.collection.cubes, vec![DyadicCube::new(2, vec![1])]);
        assert!((out.v_i.integral() - 0.5).abs() < 1e-15);

        let z = GridFunction::zeros(unit1(), 2).unwrap();
        let out = cap_masses(&z, &unit1(), 1.0, &ContentParams::new(2)).unwrap();
        assert!(out.v_i.is_zero() && out.collection.is_empty());
        assert!(cap_masses(&z, &unit1(), 0.0, &ContentParams::new(2)).is_err());
    }

    #[test]
    fn split_half_interval() {
        let v = GridFunction::indicator(unit1(), 1, &DyadicCube::new(1, vec![0]), 1.0).unwrap();
        let s = split_once(&v, &unit1(), &ContentParams::new(1)).unwrap();
        assert_eq!(s.g, v);
        assert!(s.h.is_zero());
        assert_eq!(s.certificate.constants["length_ratio"], 0.0);
        assert_eq!(s.certificate.constants["thickness_product_ratio"], 1.0);
    }

    #[test]
    fn split_box() {
        for n in 0..4 {
            let q = DyadicCube::unit(2);
            let v = GridFunction::indicator(q.clone(), 3, &DyadicCube::new(1, vec![1, 0]), 2.0)
                .unwrap();
            let s = split_once(&v, &q, &ContentParams::new(n)).unwrap();
            assert!(s.certificate.constants["length_ratio"] <= 0.5);
        }
    }

    #[test]
    fn iteration_terminates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let mut f = random_nonneg(&mut rng, 2, 3, 12);
            f = f.map(|x| if x > 2.0 { x } else { -x });
            for n in 1..=3 {
                let it = iterate_split(&f, &ContentParams::new(n), n as usize).unwrap();
                assert!(it.absorbed);
                assert!(it.residual.is_zero());
                assert!(it.certificate.reconstructs(&f.refine(3).unwrap()));
            }
        }
        let z = GridFunction::zeros(DyadicCube::unit(1), 2).unwrap();
        let it = iterate_split(&z, &ContentParams::new(2), 1).unwrap();
        assert!(it.pieces.iter().all(|g| g.is_zero()));
    }

    #[test]
    fn stopping_zero_and_single() {
        let dil = DilationGroup::isotropic(1);
        let root = DyadicCube::new(-3, vec![0]);
        let zero = TaggedPiece {
            scale: 1,
            b: GridFunction::zeros(root.clone(), 2).unwrap(),
        };
        let out = stopping_decomposition(&[zero], 2, 0, 1.0, &dil).unwrap();
        assert!(out.pieces.is_empty());

        let b = GridFunction::from_cells(
            root,
            2,
            (0..8)
                .map(|i| (vec![i], if i % 2 == 0 { 1.5 } else { -1.5 }))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let out = stopping_decomposition(
            &[TaggedPiece {
                scale: 1,
                b: b.clone(),
            }],
            2,
            0,
            1.0,
            &dil,
        )
        .unwrap();
        let total: f64 = out.pieces.iter().map(|p| p.f.l1_norm()).sum();
        assert!((total - b.l1_norm()).abs() < 1e-12);
        assert!(out.max_stopping_index <= 3);
        assert!(out.pieces.iter().all(|p| p.kappa >= 1));
    }

    #[test]
    fn stopping_rejects_bad_scales() {
        let dil = DilationGroup::isotropic(1);
        let root = DyadicCube::new(-3, vec![0]);
        let b = GridFunction::from_cells(root, 2, vec![(vec![0], 1.0), (vec![1], -1.0)]).unwrap();
        assert!(stopping_decomposition(
            &[TaggedPiece {
                scale: 5,
                b: b.clone()
            }],
            2,
            0,
            1.0,
            &dil
        )
        .is_err());
        assert!(stopping_decomposition(&[TaggedPiece { scale: 0, b }], 2, 0, 0.0, &dil).is_err());
    }

    #[test]
    fn stopping_random_instances() {
        let dil = DilationGroup::isotropic(1);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let pieces = random_bad_pieces(&mut rng, 2, 0, 1.0, 0.125, 2, -3, 2).unwrap();
            let out = stopping_decomposition(&pieces, 2, 0, 1.0, &dil).unwrap();
            assert!(out.max_stopping_index <= 3);
            assert!(out.max_thickness_ratio <= 1.0);
            for (i, t) in pieces.iter().enumerate() {
                let mut sum = GridFunction::zeros(t.b.root().clone(), t.b.resolution()).unwrap();
                for p in out.pieces.iter().filter(|p| p.region == i) {
                    assert!(p.kappa >= t.scale);
                    sum = sum.add(&p.f).unwrap();
                }
                let b = t.b.refine(sum.resolution()).unwrap();
                for (c, x) in b.iter() {
                    assert!((sum.get(c) - x).abs() <= 1e-12 * x.abs());
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn cap_masses_invariants(seed in 0u64..100_000, gamma in 0.05f64..4.0, n in 1i32..4, d in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_nonneg(&mut rng, d, n, 6);
            cap_masses(&v, &DyadicCube::unit(d), gamma, &ContentParams::new(n)).unwrap();
        }

        #[test]
        fn split_constants(seed in 0u64..100_000, n in 0i32..4, d in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_nonneg(&mut rng, d, 3, 7);
            let s = split_once(&v, &DyadicCube::unit(d), &ContentParams::new(n)).unwrap();
            prop_assert!(s.certificate.constants["length_ratio"] <= 0.5);
            prop_assert!(s.certificate.constants["thickness_product_ratio"] <= 8.0 * (1.0 + 1e-9));
            prop_assert!(s.g.is_nonnegative() && s.h.is_nonnegative());
        }
    }
}
