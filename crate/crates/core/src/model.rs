//! Quadratic Hamiltonians on graphs with a damped, forced boundary.
//!
//! The state is `ψ = (q, p)` with `H(ψ) = ½|p|² + ½(Vq, q)`. Vertices are
//! numbered `0..N`; the boundary is the last `m` of them. The drift of the
//! damped system is
//!
//! ```text
//! A = [  0    E  ]
//!     [ -V  -αD ]
//! ```
//!
//! where `D` projects onto the boundary vertices.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, inf_norm, symmetrize};
use crate::scalar::{lit, to_f64, Real};

/// Largest number of vertices accepted by the lattice builder.
pub const MAX_VERTICES: usize = 512;
/// Relative eigenvalue floor for positive definiteness.
pub const PD_FLOOR: f64 = 1e-10;

/// Connected graph on `0..n` with every loop `(i, i)` implicitly present,
/// plus its shortest-path metric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    n: usize,
    neighbors: Vec<BTreeSet<usize>>,
    distances: Vec<Vec<usize>>,
}

impl InteractionGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::BadConfig("graph needs at least one vertex".into()));
        }
        let mut neighbors = vec![BTreeSet::new(); n];
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::BadConfig(format!("edge ({i},{j}) outside 0..{n}")));
            }
            if i != j {
                neighbors[i].insert(j);
                neighbors[j].insert(i);
            }
        }
        let distances: Vec<Vec<usize>> = (0..n).map(|s| bfs(&neighbors, s)).collect();
        if distances[0].contains(&usize::MAX) {
            return Err(Error::DisconnectedGraph);
        }
        Ok(Self {
            n,
            neighbors,
            distances,
        })
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::new(n, (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))))
    }

    pub fn path(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (i - 1, i)))
    }

    /// Nearest-neighbour graph on `{-M..=M}^d`, vertices in lexicographic
    /// order of their coordinates.
    pub fn cube(d: usize, half_width: usize) -> Result<Self> {
        let side = 2 * half_width + 1;
        let n = side.checked_pow(d as u32).ok_or(Error::SizeCap {
            n: usize::MAX,
            cap: MAX_VERTICES,
        })?;
        let mut edges = Vec::new();
        for idx in 0..n {
            let mut stride = 1;
            for _ in 0..d {
                let coord = (idx / stride) % side;
                if coord + 1 < side {
                    edges.push((idx, idx + stride));
                }
                stride *= side;
            }
        }
        Self::new(n, edges)
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        i == j || self.neighbors[i].contains(&j)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn distance(&self, i: usize, j: usize) -> usize {
        self.distances[i][j]
    }

    /// `min_{k in set} r(i, k)`.
    pub fn distance_to_set(&self, i: usize, set: impl IntoIterator<Item = usize>) -> usize {
        set.into_iter()
            .map(|k| self.distances[i][k])
            .min()
            .unwrap_or(usize::MAX)
    }

    pub fn diameter(&self) -> usize {
        self.distances
            .iter()
            .flat_map(|row| row.iter().copied())
            .max()
            .unwrap_or(0)
    }

    /// All edges `(i, j)` with `i <= j`, loops included, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            out.push((i, i));
            out.extend(self.neighbors[i].range((i + 1)..).map(|&j| (i, j)));
        }
        out
    }

    /// Graph Laplacian `L = deg - adjacency`.
    pub fn laplacian<T: Real>(&self) -> DMatrix<T> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            l[(i, i)] = lit(self.degree(i) as f64);
            for &j in &self.neighbors[i] {
                l[(i, j)] = -T::one();
            }
        }
        l
    }

    /// Same graph with vertex `new` corresponding to vertex `order[new]`.
    fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut inverse = vec![0; self.n];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        Self::new(
            self.n,
            self.edges()
                .into_iter()
                .map(|(i, j)| (inverse[i], inverse[j])),
        )
    }
}

fn bfs(neighbors: &[BTreeSet<usize>], source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; neighbors.len()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &w in &neighbors[u] {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Positive-definite quadratic Hamiltonian on a graph, with damping `α` on
/// the boundary vertices `N-m..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianModel<T: Real> {
    v: DMatrix<T>,
    graph: InteractionGraph,
    m: usize,
    alpha: T,
    gamma: Option<usize>,
    norm_inf: T,
    min_eigenvalue: T,
}

impl<T: Real> HamiltonianModel<T> {
    pub fn v(&self) -> &DMatrix<T> {
        &self.v
    }

    pub fn graph(&self) -> &InteractionGraph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    pub fn boundary_size(&self) -> usize {
        self.m
    }

    pub fn boundary(&self) -> std::ops::Range<usize> {
        (self.n() - self.m)..self.n()
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// Smallest `γ` for which `V` is `γ`-local (`None` for diagonal `V`), or
    /// the value declared through [`HamiltonianModel::with_locality`].
    pub fn gamma(&self) -> Option<usize> {
        self.gamma
    }

    /// `max_i sum_j |V(i,j)|`.
    pub fn norm_inf(&self) -> T {
        self.norm_inf
    }

    pub fn min_eigenvalue(&self) -> T {
        self.min_eigenvalue
    }

    /// Distance of vertex `i` to the boundary set.
    pub fn boundary_distance(&self, i: usize) -> usize {
        self.graph.distance_to_set(i, self.boundary())
    }

    /// Declares a locality radius, checking that `V` respects it.
    pub fn with_locality(mut self, gamma: usize) -> Result<Self> {
        let n = self.n();
        for i in 0..n {
            for j in 0..n {
                let r = self.graph.distance(i, j);
                if self.v[(i, j)] != T::zero() && r > gamma {
                    return Err(Error::LocalityViolation {
                        i,
                        j,
                        distance: r,
                        gamma,
                    });
                }
            }
        }
        self.gamma = Some(gamma);
        Ok(self)
    }

    /// `H(ψ) = ½(p,p) + ½(Vq,q)`.
    pub fn hamiltonian(&self, psi: &DVector<T>) -> T {
        let n = self.n();
        let q = psi.rows(0, n);
        let p = psi.rows(n, n);
        let half = lit::<T>(0.5);
        (p.dot(&p) + q.dot(&(&self.v * q))) * half
    }
}

/// Validates and assembles a model with boundary `{N-m, ..., N-1}`.
pub fn build_model<T: Real>(
    v: DMatrix<T>,
    graph: InteractionGraph,
    m: usize,
    alpha: T,
) -> Result<HamiltonianModel<T>> {
    let n = linalg::ensure_square(&v)?;
    if n != graph.vertex_count() {
        return Err(Error::DimensionMismatch(format!(
            "V is {n}x{n} but graph has {} vertices",
            graph.vertex_count()
        )));
    }
    if m == 0 || m > n {
        return Err(Error::BadBoundary { m, n });
    }
    if !(alpha > T::zero()) || !alpha.is_finite() {
        return Err(Error::BadConfig(format!(
            "damping must be positive, got {}",
            to_f64(alpha)
        )));
    }
    if !linalg::is_finite(&v) {
        return Err(Error::BadConfig("V has non-finite entries".into()));
    }
    let spectrum = linalg::sym_eig(&v)?;
    let v = symmetrize(&v);

    let mut gamma = None;
    for i in 0..n {
        for j in 0..n {
            if i == j || v[(i, j)] == T::zero() {
                continue;
            }
            if !graph.is_edge(i, j) {
                return Err(Error::GraphMismatch {
                    i,
                    j,
                    value: to_f64(v[(i, j)]),
                });
            }
            let r = graph.distance(i, j);
            gamma = Some(gamma.map_or(r, |g: usize| g.max(r)));
        }
    }

    let lo = spectrum.min_eigenvalue();
    let hi = spectrum.max_eigenvalue().abs().max(lo.abs());
    if lo <= lit::<T>(PD_FLOOR) * hi {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: to_f64(lo),
        });
    }

    Ok(HamiltonianModel {
        norm_inf: inf_norm(&v),
        v,
        graph,
        m,
        alpha,
        gamma,
        min_eigenvalue: lo,
    })
}

/// Builds a model whose boundary is an arbitrary vertex set by relabelling:
/// interior vertices keep their relative order and come first, `boundary`
/// vertices follow in the given order. Returns the model and `order`, where
/// new vertex `k` is old vertex `order[k]`.
pub fn build_model_with_boundary<T: Real>(
    v: DMatrix<T>,
    graph: InteractionGraph,
    boundary: &[usize],
    alpha: T,
) -> Result<(HamiltonianModel<T>, Vec<usize>)> {
    let n = graph.vertex_count();
    let set: BTreeSet<usize> = boundary.iter().copied().collect();
    if set.len() != boundary.len() || boundary.iter().any(|&b| b >= n) || set.is_empty() {
        return Err(Error::BadBoundary {
            m: boundary.len(),
            n,
        });
    }
    let order: Vec<usize> = (0..n)
        .filter(|i| !set.contains(i))
        .chain(boundary.iter().copied())
        .collect();
    let pv = DMatrix::from_fn(n, n, |i, j| v[(order[i], order[j])]);
    let model = build_model(pv, graph.permuted(&order)?, boundary.len(), alpha)?;
    Ok((model, order))
}

/// Chain with energy `Σ ω0 q_i² + ω1 Σ (q_i - q_{i+1})²`, normalised so that
/// `½(Vq, q)` equals it: `V = 2 ω0 I + 2 ω1 L` with `L` the path Laplacian.
pub fn harmonic_chain<T: Real>(
    n: usize,
    omega0: T,
    omega1: T,
    m: usize,
    alpha: T,
) -> Result<HamiltonianModel<T>> {
    if n == 0 {
        return Err(Error::BadConfig("chain needs at least one site".into()));
    }
    if !(omega0 > T::zero() && omega1 > T::zero()) {
        return Err(Error::BadConfig("chain couplings must be positive".into()));
    }
    let graph = InteractionGraph::path(n)?;
    let two = lit::<T>(2.0);
    let v = DMatrix::<T>::identity(n, n) * (two * omega0) + graph.laplacian::<T>() * (two * omega1);
    build_model(v, graph, m, alpha)
}

/// Couplings of a lattice model: `V = onsite · I + bond · L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeCouplings<T> {
    pub onsite: T,
    pub bond: T,
}

/// Nearest-neighbour model on the cube `{-M..=M}^d`, `d ∈ {1, 2}`.
pub fn lattice_cube<T: Real>(
    d: usize,
    half_width: usize,
    couplings: LatticeCouplings<T>,
    m: usize,
    alpha: T,
) -> Result<HamiltonianModel<T>> {
    if !(1..=2).contains(&d) {
        return Err(Error::BadConfig(format!(
            "lattice dimension {d} not in {{1, 2}}"
        )));
    }
    let side = 2 * half_width + 1;
    let n = side.pow(d as u32);
    if n > MAX_VERTICES {
        return Err(Error::SizeCap {
            n,
            cap: MAX_VERTICES,
        });
    }
    if !(couplings.onsite > T::zero()) || couplings.bond < T::zero() {
        return Err(Error::BadConfig(
            "lattice needs onsite > 0 and bond >= 0".into(),
        ));
    }
    let graph = InteractionGraph::cube(d, half_width)?;
    let v =
        DMatrix::<T>::identity(n, n) * couplings.onsite + graph.laplacian::<T>() * couplings.bond;
    build_model(v, graph, m, alpha)
}

/// `V + V₁` with `V₁` symmetric, supported on the graph edges (loops
/// included), entries uniform in `[-ε, ε]` drawn in edge order from a
/// ChaCha8 stream seeded with `seed`.
pub fn perturb<T: Real>(
    model: &HamiltonianModel<T>,
    eps: T,
    seed: u64,
) -> Result<HamiltonianModel<T>> {
    if eps < T::zero() || !eps.is_finite() {
        return Err(Error::BadConfig("perturbation size must be >= 0".into()));
    }
    if eps == T::zero() {
        return Ok(model.clone());
    }
    if eps >= model.min_eigenvalue {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: to_f64(model.min_eigenvalue - eps),
        });
    }
    let n = model.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v1 = DMatrix::<T>::zeros(n, n);
    for (i, j) in model.graph.edges() {
        let u: f64 = rng.random_range(-1.0..=1.0);
        let x = lit::<T>(u) * eps;
        v1[(i, j)] = x;
        v1[(j, i)] = x;
    }
    build_model(&model.v + v1, model.graph.clone(), model.m, model.alpha)
}

/// The drift `A` and the objects derived from it.
#[derive(Debug, Clone)]
pub struct DriftMatrix<T: Real> {
    a: DMatrix<T>,
    a_v: DMatrix<T>,
    a_d: DMatrix<T>,
    d: DMatrix<T>,
    d2: DMatrix<T>,
    v_inv: DMatrix<T>,
    c_g: DMatrix<T>,
    alpha: T,
    m: usize,
    eigenvalues: Vec<Complex<T>>,
    spectral_abscissa: T,
}

impl<T: Real> DriftMatrix<T> {
    pub fn n(&self) -> usize {
        self.d.nrows()
    }
    pub fn boundary_size(&self) -> usize {
        self.m
    }
    pub fn alpha(&self) -> T {
        self.alpha
    }
    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }
    /// Conservative part `[[0, E], [-V, 0]]`.
    pub fn a_v(&self) -> &DMatrix<T> {
        &self.a_v
    }
    /// Damping part `[[0, 0], [0, -αD]]`.
    pub fn a_d(&self) -> &DMatrix<T> {
        &self.a_d
    }
    pub fn d(&self) -> &DMatrix<T> {
        &self.d
    }
    /// `2N x 2N` projector onto the boundary momenta.
    pub fn d2(&self) -> &DMatrix<T> {
        &self.d2
    }
    pub fn v_inv(&self) -> &DMatrix<T> {
        &self.v_inv
    }
    /// Gibbs covariance at `β = 2α`.
    pub fn c_g(&self) -> &DMatrix<T> {
        &self.c_g
    }
    pub fn eigenvalues(&self) -> &[Complex<T>] {
        &self.eigenvalues
    }
    pub fn spectral_abscissa(&self) -> T {
        self.spectral_abscissa
    }

    /// `||A C_G + C_G A^T + D2||_F`.
    pub fn lyapunov_identity_residual(&self) -> T {
        (&self.a * &self.c_g + &self.c_g * self.a.transpose() + &self.d2).norm()
    }
}

/// Gibbs covariance `β⁻¹ diag(V⁻¹, E)` at inverse temperature `β`.
pub fn gibbs_covariance<T: Real>(model: &HamiltonianModel<T>, beta: T) -> Result<DMatrix<T>> {
    let v_inv = spd_inverse(model.v())?;
    Ok(block_diag(&v_inv, &DMatrix::identity(model.n(), model.n())) / beta)
}

pub(crate) fn spd_inverse<T: Real>(v: &DMatrix<T>) -> Result<DMatrix<T>> {
    let chol = v.clone().cholesky().ok_or(Error::NotPositiveDefinite {
        min_eigenvalue: f64::NAN,
    })?;
    Ok(symmetrize(&chol.inverse()))
}

pub(crate) fn block_diag<T: Real>(top: &DMatrix<T>, bottom: &DMatrix<T>) -> DMatrix<T> {
    let (n1, n2) = (top.nrows(), bottom.nrows());
    let mut out = DMatrix::zeros(n1 + n2, n1 + n2);
    out.view_mut((0, 0), (n1, n1)).copy_from(top);
    out.view_mut((n1, n1), (n2, n2)).copy_from(bottom);
    out
}

pub fn build_drift<T: Real>(model: &HamiltonianModel<T>) -> Result<DriftMatrix<T>> {
    let n = model.n();
    let alpha = model.alpha();
    let mut d = DMatrix::<T>::zeros(n, n);
    for k in model.boundary() {
        d[(k, k)] = T::one();
    }
    let mut d2 = DMatrix::<T>::zeros(2 * n, 2 * n);
    d2.view_mut((n, n), (n, n)).copy_from(&d);

    let mut a_v = DMatrix::<T>::zeros(2 * n, 2 * n);
    a_v.view_mut((0, n), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    a_v.view_mut((n, 0), (n, n)).copy_from(&(-model.v()));
    let mut a_d = DMatrix::<T>::zeros(2 * n, 2 * n);
    a_d.view_mut((n, n), (n, n)).copy_from(&(&d * (-alpha)));
    let a = &a_v + &a_d;

    let v_inv = spd_inverse(model.v())?;
    let c_g = block_diag(&v_inv, &DMatrix::identity(n, n)) / (alpha + alpha);
    let eigenvalues = linalg::eigenvalues(&a)?;
    let spectral_abscissa = eigenvalues
        .iter()
        .fold(T::min_value().unwrap(), |acc, z| acc.max(z.re));

    Ok(DriftMatrix {
        a,
        a_v,
        a_d,
        d,
        d2,
        v_inv,
        c_g,
        alpha,
        m: model.boundary_size(),
        eigenvalues,
        spectral_abscissa,
    })
}

/// Random connected-graph model for tests and suites: a random spanning
/// tree plus extra edges, diagonally dominant `V`.
pub fn random_model<T: Real>(
    n: usize,
    m: usize,
    alpha: T,
    seed: u64,
) -> Result<HamiltonianModel<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((rng.random_range(0..i), i));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(0.3) {
                edges.push((i, j));
            }
        }
    }
    let graph = InteractionGraph::new(n, edges)?;
    let mut v = DMatrix::<T>::zeros(n, n);
    for (i, j) in graph.edges() {
        if i != j {
            let x = lit::<T>(rng.random_range(-1.0..1.0));
            v[(i, j)] = x;
            v[(j, i)] = x;
        }
    }
    for i in 0..n {
        let off = (0..n).fold(T::zero(), |acc, j| acc + v[(i, j)].abs());
        v[(i, i)] = off + lit::<T>(rng.random_range(0.5..2.0));
    }
    build_model(v, graph, m, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    #[test]
    fn scalar_model() {
        let g = InteractionGraph::path(1).unwrap();
        let model = build_model(dmatrix![1.0], g, 1, 0.5).unwrap();
        assert_eq!(model.n(), 1);
        assert_eq!(model.gamma(), None);
        assert_eq!(model.boundary(), 0..1);
    }

    #[test]
    fn chain_conventions() {
        let one = harmonic_chain(1, 0.7, 0.3, 1, 1.0).unwrap();
        assert_eq!(one.v(), &dmatrix![1.4]);
        let two = harmonic_chain(2, 1.0, 1.0, 1, 1.0).unwrap();
        assert_eq!(two.v(), &dmatrix![4.0, -2.0; -2.0, 4.0]);
        assert_eq!(two.gamma(), Some(1));
    }

    #[test]
    fn chain_quadratic_form_matches_energy() {
        let (w0, w1) = (0.4, 1.3);
        let chain = harmonic_chain(5, w0, w1, 1, 1.0).unwrap();
        let q = DVector::from_vec(vec![0.3, -1.2, 0.5, 2.0, -0.7]);
        let energy: f64 = q.iter().map(|x| w0 * x * x).sum::<f64>()
            + (0..4).map(|i| w1 * (q[i] - q[i + 1]).powi(2)).sum::<f64>();
        let half_form = 0.5 * q.dot(&(chain.v() * &q));
        assert!((energy - half_form).abs() < 1e-13);
    }

    #[test]
    fn rejects_indefinite() {
        let g = InteractionGraph::complete(2).unwrap();
        let err = build_model(dmatrix![1.0, 2.0; 2.0, 1.0], g, 1, 1.0).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn rejects_off_graph_entries() {
        let g = InteractionGraph::path(3).unwrap();
        let v = dmatrix![2.0, 0.0, 0.1; 0.0, 2.0, 0.0; 0.1, 0.0, 2.0];
        assert!(matches!(
            build_model(v, g, 1, 1.0),
            Err(Error::GraphMismatch { i: 0, j: 2, .. })
        ));
    }

    #[test]
    fn rejects_bad_boundary() {
        let g = InteractionGraph::path(2).unwrap();
        let v = dmatrix![2.0, 0.0; 0.0, 2.0];
        assert_eq!(
            build_model(v.clone(), g.clone(), 0, 1.0).unwrap_err(),
            Error::BadBoundary { m: 0, n: 2 }
        );
        assert_eq!(
            build_model(v, g, 3, 1.0).unwrap_err(),
            Error::BadBoundary { m: 3, n: 2 }
        );
    }

    #[test]
    fn rejects_disconnected_graph() {
        assert_eq!(
            InteractionGraph::new(3, [(0, 1)]).unwrap_err(),
            Error::DisconnectedGraph
        );
    }

    #[test]
    fn locality_declaration() {
        let chain = harmonic_chain(4, 1.0, 1.0, 1, 1.0).unwrap();
        assert!(chain.clone().with_locality(2).is_ok());
        let g = InteractionGraph::complete(3).unwrap();
        let v = dmatrix![2.0, 0.0, 0.1; 0.0, 2.0, 0.0; 0.1, 0.0, 2.0];
        // complete graph: every pair is at distance 1
        assert!(build_model(v, g, 1, 1.0).unwrap().with_locality(1).is_ok());
    }

    #[test]
    fn cube_graphs() {
        let line = InteractionGraph::cube(1, 1).unwrap();
        assert_eq!(line.vertex_count(), 3);
        assert_eq!(line.edges(), vec![(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]);
        let grid = InteractionGraph::cube(2, 1).unwrap();
        assert_eq!(grid.vertex_count(), 9);
        assert_eq!(grid.degree(4), 4);
        assert_eq!(grid.degree(0), 2);
        assert_eq!(grid.diameter(), 4);
        let model = lattice_cube(
            2,
            1,
            LatticeCouplings {
                onsite: 1.0,
                bond: 0.5,
            },
            2,
            1.0,
        )
        .unwrap();
        assert_eq!(model.gamma(), Some(1));
        assert!(matches!(
            lattice_cube(
                2,
                20,
                LatticeCouplings {
                    onsite: 1.0,
                    bond: 0.5
                },
                1,
                1.0
            ),
            Err(Error::SizeCap { .. })
        ));
    }

    #[test]
    fn perturb_zero_and_determinism() {
        let chain = harmonic_chain(4, 1.0, 1.0, 1, 1.0).unwrap();
        assert_eq!(perturb(&chain, 0.0, 9).unwrap(), chain);
        let a = perturb(&chain, 0.01, 42).unwrap();
        let b = perturb(&chain, 0.01, 42).unwrap();
        assert_eq!(a.v(), b.v());
        let delta = a.v() - chain.v();
        assert!(delta.amax() <= 0.01);
        assert_eq!(delta[(0, 3)], 0.0);
        assert!(linalg::asymmetry(&delta) == 0.0);
    }

    #[test]
    fn perturb_too_large() {
        let g = InteractionGraph::complete(2).unwrap();
        let model = build_model(dmatrix![1.0, 0.0; 0.0, 2.0], g, 1, 1.0).unwrap();
        assert!(matches!(
            perturb(&model, 1.5, 0),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn relabelled_boundary() {
        let g = InteractionGraph::path(3).unwrap();
        let v = dmatrix![3.0, -1.0, 0.0; -1.0, 4.0, -1.0; 0.0, -1.0, 5.0];
        let (model, order) = build_model_with_boundary(v, g, &[0], 1.0).unwrap();
        assert_eq!(order, vec![1, 2, 0]);
        assert_eq!(model.v()[(2, 2)], 3.0);
        assert_eq!(model.v()[(2, 0)], -1.0);
        assert!(model.graph().is_edge(0, 2));
    }

    #[test]
    fn scalar_drift_and_gibbs() {
        let (w2, alpha) = (2.5, 0.8);
        let model =
            build_model(dmatrix![w2], InteractionGraph::path(1).unwrap(), 1, alpha).unwrap();
        let drift = build_drift(&model).unwrap();
        assert_eq!(drift.a(), &dmatrix![0.0, 1.0; -w2, -alpha]);
        let expected = dmatrix![1.0 / w2, 0.0; 0.0, 1.0] / (2.0 * alpha);
        assert!((drift.c_g() - expected).norm() < 1e-15);
        assert_eq!(&(drift.a_v() + drift.a_d()), drift.a());
    }

    #[test]
    fn boundary_projector_layout() {
        let model = harmonic_chain(4, 1.0, 1.0, 2, 1.0).unwrap();
        let drift = build_drift(&model).unwrap();
        let diag: Vec<f64> = drift.d2().diagonal().iter().copied().collect();
        assert_eq!(diag, vec![0., 0., 0., 0., 0., 0., 1., 1.]);
    }

    #[test]
    fn general_beta_accessor() {
        let model = harmonic_chain(3, 1.0, 0.5, 1, 0.7).unwrap();
        let drift = build_drift(&model).unwrap();
        let g = gibbs_covariance(&model, 1.4).unwrap();
        assert!((g - drift.c_g()).norm() < 1e-14);
    }

    proptest! {
        #[test]
        fn drift_lyapunov_identity(seed in 0u64..500, n in 1usize..7, m_frac in 0.0f64..1.0, alpha in 0.1f64..3.0) {
            let m = 1 + ((n - 1) as f64 * m_frac) as usize;
            let model = random_model::<f64>(n, m, alpha, seed).unwrap();
            let drift = build_drift(&model).unwrap();
            prop_assert!(drift.lyapunov_identity_residual() <= 1e-12 * (1.0 + drift.c_g().norm()));
        }

        #[test]
        fn hamiltonian_positive(seed in 0u64..200, x in proptest::collection::vec(-3.0f64..3.0, 8)) {
            let model = random_model::<f64>(4, 1, 1.0, seed).unwrap();
            let psi = DVector::from_vec(x);
            let h = model.hamiltonian(&psi);
            if psi.norm() > 0.0 { prop_assert!(h > 0.0); } else { prop_assert!(h == 0.0); }
        }
    }
}
