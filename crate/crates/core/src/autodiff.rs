//! Reverse-mode differentiation over a linear tape.
//!
//! Every primitive application appends a node holding its output value and
//! references to its inputs. `backward` walks the tape in reverse order and
//! accumulates vector-Jacobian products. Nodes that do not depend on any
//! parameter are marked as not requiring gradients and are skipped.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, Matrix, SparseMatrix};

/// Identity of a trainable parameter; gradients are keyed by it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Column indices `(anchor, positive, negative)` into an embedding matrix.
pub type TripletColumns = [usize; 3];

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Elu(Var),
    Spmm(Var, Arc<SparseMatrix>),
    ConcatRows(Var, Var),
    SelectColumns(Var, Arc<[usize]>),
    L2Normalize(Var, f64),
    Sum(Var),
    TripletLoss {
        input: Var,
        triplets: Arc<[TripletColumns]>,
        margin: f64,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

/// The computation record: primitive applications in execution order.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every parameter on the tape.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    pub fn into_map(self) -> BTreeMap<ParamId, Matrix> {
        self.by_param
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, requires_grad: bool) -> Result<Var> {
        let value = compute(&op, &self.nodes)?;
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            op: Op::Input,
            value,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable parameter.
    pub fn param(&mut self, id: ParamId, value: Matrix) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::MatMul(a, b), rg)
    }

    /// Adds a column vector to every column of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let rg = self.requires(x) || self.requires(bias);
        self.push(Op::AddBias(x, bias), rg)
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        let rg = self.requires(x);
        self.push(Op::Elu(x), rg)
    }

    /// Dense value times a fixed sparse matrix.
    pub fn spmm(&mut self, x: Var, sparse: Arc<SparseMatrix>) -> Result<Var> {
        let rg = self.requires(x);
        self.push(Op::Spmm(x, sparse), rg)
    }

    pub fn concat_rows(&mut self, top: Var, bottom: Var) -> Result<Var> {
        let rg = self.requires(top) || self.requires(bottom);
        self.push(Op::ConcatRows(top, bottom), rg)
    }

    pub fn select_columns(&mut self, x: Var, columns: impl Into<Arc<[usize]>>) -> Result<Var> {
        let rg = self.requires(x);
        self.push(Op::SelectColumns(x, columns.into()), rg)
    }

    pub fn l2_normalize_columns(&mut self, x: Var, epsilon: f64) -> Result<Var> {
        let rg = self.requires(x);
        self.push(Op::L2Normalize(x, epsilon), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let rg = self.requires(x);
        self.push(Op::Sum(x), rg)
    }

    /// Mean triplet hinge `[d(a,p) - d(a,n) + margin]+` over the given
    /// column triples of `input`, using Euclidean distance.
    pub fn triplet_loss(
        &mut self,
        input: Var,
        triplets: impl Into<Arc<[TripletColumns]>>,
        margin: f64,
    ) -> Result<Var> {
        let rg = self.requires(input);
        self.push(
            Op::TripletLoss {
                input,
                triplets: triplets.into(),
                margin,
            },
            rg,
        )
    }

    /// Recomputes every node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Matrix>> {
        let mut replayed: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Input | Op::Param(_) => node.value.clone(),
                _ => compute(&node.op, &replayed)?,
            };
            replayed.push(Node {
                op: node.op.clone(),
                value,
                requires_grad: node.requires_grad,
            });
        }
        Ok(replayed.into_iter().map(|n| n.value).collect())
    }

    /// Gradients of the scalar `root` with respect to every parameter
    /// recorded on the tape. Parameters the root does not depend on get a
    /// zero gradient.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let (rows, cols) = self.value(root).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarRoot { rows, cols });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::scalar(1.0));
        let mut out = Gradients::default();

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if let Op::Param(id) = node.op {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()));
                accumulate_param(&mut out, id, g);
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
        }
        for node in &self.nodes[root.0 + 1..] {
            if let Op::Param(id) = node.op {
                let z = Matrix::zeros(node.value.rows(), node.value.cols());
                accumulate_param(&mut out, id, z);
            }
        }
        Ok(out)
    }

    fn propagate(
        &self,
        op: &Op,
        output: &Matrix,
        g: &Matrix,
        grads: &mut [Option<Matrix>],
    ) -> Result<()> {
        match op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires(*a) {
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    tensor::gemm(1.0, g, false, bv, true, 0.0, &mut da)?;
                    add_grad(grads, *a, da);
                }
                if self.requires(*b) {
                    let mut db = Matrix::zeros(bv.rows(), bv.cols());
                    tensor::gemm(1.0, av, true, g, false, 0.0, &mut db)?;
                    add_grad(grads, *b, db);
                }
            }
            Op::AddBias(x, bias) => {
                if self.requires(*x) {
                    add_grad(grads, *x, g.clone());
                }
                if self.requires(*bias) {
                    let db = Matrix::from_fn(g.rows(), 1, |r, _| g.row(r).iter().sum());
                    add_grad(grads, *bias, db);
                }
            }
            Op::Elu(x) => {
                let xv = self.value(*x);
                let mut dx = g.clone();
                for (d, &xi) in dx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                    *d *= tensor::elu_grad_scalar(xi);
                }
                add_grad(grads, *x, dx);
            }
            Op::Spmm(x, sparse) => {
                add_grad(grads, *x, tensor::spmm_transpose(g, sparse)?);
            }
            Op::ConcatRows(top, bottom) => {
                let split = self.value(*top).len();
                let (gt, gb) = g.as_slice().split_at(split);
                if self.requires(*top) {
                    let t = self.value(*top);
                    add_grad(grads, *top, Matrix::from_vec(t.rows(), t.cols(), gt.to_vec())?);
                }
                if self.requires(*bottom) {
                    let b = self.value(*bottom);
                    add_grad(grads, *bottom, Matrix::from_vec(b.rows(), b.cols(), gb.to_vec())?);
                }
            }
            Op::SelectColumns(x, columns) => {
                let xv = self.value(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    for (j, &c) in columns.iter().enumerate() {
                        let v = dx.get(r, c) + g.get(r, j);
                        dx.set(r, c, v);
                    }
                }
                add_grad(grads, *x, dx);
            }
            Op::L2Normalize(x, eps) => {
                let xv = self.value(*x);
                let norms = xv.column_norms();
                // dot(y_c, g_c) per column
                let mut dots = vec![0.0; xv.cols()];
                for r in 0..xv.rows() {
                    for (c, d) in dots.iter_mut().enumerate() {
                        *d += output.get(r, c) * g.get(r, c);
                    }
                }
                let dx = Matrix::from_fn(xv.rows(), xv.cols(), |r, c| {
                    if norms[c] > *eps {
                        (g.get(r, c) - output.get(r, c) * dots[c]) / norms[c]
                    } else {
                        g.get(r, c) / eps
                    }
                });
                add_grad(grads, *x, dx);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                let s = g.get(0, 0);
                add_grad(grads, *x, Matrix::from_fn(xv.rows(), xv.cols(), |_, _| s));
            }
            Op::TripletLoss {
                input,
                triplets,
                margin,
            } => {
                let y = self.value(*input);
                let scale = g.get(0, 0) / triplets.len() as f64;
                let mut dy = Matrix::zeros(y.rows(), y.cols());
                for &[a, p, n] in triplets.iter() {
                    let d_ap = column_distance(y, a, p);
                    let d_an = column_distance(y, a, n);
                    if d_ap - d_an + margin <= 0.0 {
                        continue;
                    }
                    for r in 0..y.rows() {
                        let (ya, yp, yn) = (y.get(r, a), y.get(r, p), y.get(r, n));
                        let u_ap = if d_ap > 0.0 { (ya - yp) / d_ap } else { 0.0 };
                        let u_an = if d_an > 0.0 { (ya - yn) / d_an } else { 0.0 };
                        dy.set(r, a, dy.get(r, a) + scale * (u_ap - u_an));
                        dy.set(r, p, dy.get(r, p) - scale * u_ap);
                        dy.set(r, n, dy.get(r, n) + scale * u_an);
                    }
                }
                add_grad(grads, *input, dy);
            }
        }
        Ok(())
    }
}

fn add_grad(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn accumulate_param(out: &mut Gradients, id: ParamId, g: Matrix) {
    match out.by_param.get_mut(&id) {
        Some(existing) => existing.add_assign(&g),
        None => {
            out.by_param.insert(id, g);
        }
    }
}

fn column_distance(y: &Matrix, a: usize, b: usize) -> f64 {
    (0..y.rows())
        .map(|r| {
            let d = y.get(r, a) - y.get(r, b);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn compute(op: &Op, nodes: &[Node]) -> Result<Matrix> {
    let val = |v: &Var| &nodes[v.0].value;
    Ok(match op {
        Op::Input | Op::Param(_) => unreachable!("leaves carry their own value"),
        Op::MatMul(a, b) => tensor::matmul(val(a), val(b))?,
        Op::AddBias(x, bias) => {
            let (xv, bv) = (val(x), val(bias));
            if bv.cols() != 1 || bv.rows() != xv.rows() {
                return Err(Error::Shape(format!(
                    "bias {}x{} for {}x{} input",
                    bv.rows(),
                    bv.cols(),
                    xv.rows(),
                    xv.cols()
                )));
            }
            Matrix::from_fn(xv.rows(), xv.cols(), |r, c| xv.get(r, c) + bv.get(r, 0))
        }
        Op::Elu(x) => tensor::elu(val(x)),
        Op::Spmm(x, sparse) => tensor::spmm(val(x), sparse)?,
        Op::ConcatRows(t, b) => Matrix::concat_rows(val(t), val(b))?,
        Op::SelectColumns(x, columns) => val(x).select_columns(columns)?,
        Op::L2Normalize(x, eps) => tensor::l2_normalize_columns(val(x), *eps),
        Op::Sum(x) => Matrix::scalar(val(x).as_slice().iter().sum()),
        Op::TripletLoss {
            input,
            triplets,
            margin,
        } => {
            let y = val(input);
            if triplets.is_empty() {
                return Err(Error::Shape("triplet loss over zero triplets".into()));
            }
            if let Some(bad) = triplets.iter().flatten().find(|&&c| c >= y.cols()) {
                return Err(Error::Shape(format!(
                    "triplet column {bad} out of range for {} columns",
                    y.cols()
                )));
            }
            let total: f64 = triplets
                .iter()
                .map(|&[a, p, n]| {
                    (column_distance(y, a, p) - column_distance(y, a, n) + margin).max(0.0)
                })
                .sum();
            Matrix::scalar(total / triplets.len() as f64)
        }
    })
}

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub passed: bool,
    /// `(parameter index, flat element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Denominator floor for the relative error, so entries whose true
/// gradient is essentially zero are compared on an absolute scale.
const RELATIVE_FLOOR: f64 = 1e-6;

/// Compares `backward` gradients against `(f(θ+h) - f(θ-h)) / 2h` for every
/// element of every parameter.
///
/// `loss` receives a fresh tape and one [`Var`] per entry of `params`
/// (registered as `ParamId(i)`) and must return a scalar.
pub fn finite_difference_check<F>(
    params: &[Matrix],
    loss: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let coords = params.iter().map(|p| (0..p.len()).collect()).collect();
    check_coordinates(params, &loss, step, tolerance, coords)
}

/// Like [`finite_difference_check`], but probes at most `per_param`
/// randomly chosen elements of each parameter.
pub fn finite_difference_check_sampled<F>(
    params: &[Matrix],
    loss: F,
    step: f64,
    tolerance: f64,
    per_param: usize,
    seed: u64,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = params
        .iter()
        .map(|p| {
            let mut picked = index::sample(&mut rng, p.len(), per_param.min(p.len())).into_vec();
            picked.sort_unstable();
            picked
        })
        .collect();
    check_coordinates(params, &loss, step, tolerance, coords)
}

fn evaluate<F>(params: &[Matrix], loss: &F) -> Result<(Tape, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.param(ParamId(i), p.clone()))
        .collect();
    let root = loss(&mut tape, &vars)?;
    Ok((tape, root))
}

fn check_coordinates<F>(
    params: &[Matrix],
    loss: &F,
    step: f64,
    tolerance: f64,
    coords: Vec<Vec<usize>>,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, root) = evaluate(params, loss)?;
    let grads = tape.backward(root)?;
    let mut probe = params.to_vec();
    let mut max_err = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    for (pi, elems) in coords.iter().enumerate() {
        let analytic = grads
            .get(ParamId(pi))
            .ok_or_else(|| Error::Shape(format!("no gradient for parameter {pi}")))?;
        for &e in elems {
            let orig = probe[pi].as_slice()[e];
            probe[pi].as_mut_slice()[e] = orig + step;
            let (t, r) = evaluate(&probe, loss)?;
            let plus = t.value(r).get(0, 0);
            probe[pi].as_mut_slice()[e] = orig - step;
            let (t, r) = evaluate(&probe, loss)?;
            let minus = t.value(r).get(0, 0);
            probe[pi].as_mut_slice()[e] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.as_slice()[e];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            checked += 1;
            if err > max_err || worst.is_none() {
                max_err = max_err.max(err);
                worst = Some((pi, e));
            }
        }
    }
    Ok(GradCheck {
        max_relative_error: max_err,
        passed: max_err < tolerance,
        worst,
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::L2_EPSILON;
    use rand::Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(ParamId(0), Matrix::scalar(3.0));
        let sq = tape.matmul(w, w).unwrap();
        let g = tape.backward(sq).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn elu_gradient_negative() {
        let mut tape = Tape::new();
        let w = tape.param(ParamId(0), Matrix::scalar(-1.0));
        let y = tape.elu(w).unwrap();
        let g = tape.backward(y).unwrap();
        assert!((g.get(ParamId(0)).unwrap().get(0, 0) - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn spmm_gradient_is_upstream_times_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sparse = Arc::new(
            SparseMatrix::from_triplets(4, 3, vec![(0, 0, 0.5), (3, 0, 0.5), (1, 1, 1.0), (2, 2, 2.0)])
                .unwrap(),
        );
        let upstream = random_matrix(&mut rng, 2, 3);
        let expected = tensor::matmul(&upstream, &sparse.to_dense().transpose()).unwrap();
        let got = tensor::spmm_transpose(&upstream, &sparse).unwrap();
        for (a, b) in got.as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }

        let params = vec![random_matrix(&mut rng, 2, 4)];
        let check = finite_difference_check(
            &params,
            |t, v| {
                let y = t.spmm(v[0], sparse.clone())?;
                let e = t.elu(y)?;
                t.sum(e)
            },
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(check.passed, "{check:?}");
    }

    #[test]
    fn non_scalar_root_errors() {
        let mut tape = Tape::new();
        let w = tape.param(ParamId(0), Matrix::zeros(2, 2));
        assert!(matches!(
            tape.backward(w),
            Err(Error::NonScalarRoot { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(ParamId(0), Matrix::scalar(2.0));
        let s = tape.sum(a).unwrap();
        tape.param(ParamId(1), Matrix::zeros(3, 1));
        let g = tape.backward(s).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.get(ParamId(1)).unwrap(), &Matrix::zeros(3, 1));
    }

    #[test]
    fn quadratic_check() {
        let params = vec![Matrix::from_rows(&[&[0.3, -1.2], &[2.0, 0.7]])];
        let check = finite_difference_check(
            &params,
            |t, v| {
                let sq = t.matmul(v[0], v[0])?;
                t.sum(sq)
            },
            1e-4,
            1e-6,
        )
        .unwrap();
        assert!(check.passed, "{check:?}");
    }

    fn check_primitive(rows: usize, cols: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, rows, cols);
        let b = random_matrix(&mut rng, cols, rows);
        let bias = random_matrix(&mut rng, rows, 1);
        let bottom = random_matrix(&mut rng, 2, rows);
        let mix = random_matrix(&mut rng, rows + 1, 3);
        let params = vec![a, b, bias, bottom];
        let picked: Vec<usize> = (0..rows).rev().chain(0..1).collect();
        let check = finite_difference_check(
            &params,
            |t, v| {
                let ab = t.matmul(v[0], v[1])?;
                let ab = t.add_bias(ab, v[2])?;
                let e = t.elu(ab)?;
                let c = t.concat_rows(e, v[3])?;
                let sel = t.select_columns(c, picked.clone())?;
                let n = t.l2_normalize_columns(sel, L2_EPSILON)?;
                let m = t.input(mix.clone());
                let w = t.matmul(n, m)?;
                t.sum(w)
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(check.passed, "{rows}x{cols}: {check:?}");
    }

    #[test]
    fn primitives_match_finite_differences() {
        for (i, &(r, c)) in [(1, 1), (3, 2), (5, 7), (8, 4)].iter().enumerate() {
            check_primitive(r, c, i as u64);
        }
    }

    #[test]
    fn primitives_match_finite_differences_at_32() {
        // Largest size covered by the property; sampled to keep runtime low.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let a = random_matrix(&mut rng, 32, 32);
        let b = random_matrix(&mut rng, 32, 32);
        let sparse = Arc::new(
            SparseMatrix::from_triplets(
                32,
                32,
                (0..32).flat_map(|j| [((j * 7) % 32, j, 0.25), ((j * 11 + 3) % 32, j, 0.75)]).collect(),
            )
            .unwrap(),
        );
        let check = finite_difference_check_sampled(
            &[a, b],
            |t, v| {
                let ab = t.matmul(v[0], v[1])?;
                let e = t.elu(ab)?;
                let s = t.spmm(e, sparse.clone())?;
                let n = t.l2_normalize_columns(s, L2_EPSILON)?;
                let sq = t.matmul(n, n)?;
                t.sum(sq)
            },
            1e-5,
            1e-4,
            64,
            7,
        )
        .unwrap();
        assert!(check.passed, "{check:?}");
    }

    #[test]
    fn triplet_loss_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = random_matrix(&mut rng, 4, 5);
        let triplets: Arc<[TripletColumns]> = Arc::from(vec![[0, 1, 2], [3, 4, 0], [2, 3, 4]]);
        let check = finite_difference_check(
            &[y],
            |t, v| {
                let n = t.l2_normalize_columns(v[0], L2_EPSILON)?;
                t.triplet_loss(n, triplets.clone(), 3.0)
            },
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(check.passed, "{check:?}");
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::new();
        let a = tape.param(ParamId(0), random_matrix(&mut rng, 6, 6));
        let x = tape.input(random_matrix(&mut rng, 6, 9));
        let h = tape.matmul(a, x).unwrap();
        let h = tape.elu(h).unwrap();
        let n = tape.l2_normalize_columns(h, L2_EPSILON).unwrap();
        let s = tape.sum(n).unwrap();
        let first = tape.replay().unwrap();
        let second = tape.replay().unwrap();
        assert_eq!(first, second);
        assert_eq!(first[s.0], *tape.value(s));
        assert_eq!(first[n.0], *tape.value(n));
    }
}
