//! Forward propagation of sparse Jacobians through field expressions.
//!
//! A [`Field`] carries point values together with their sparse Jacobian with
//! respect to the coefficient vector `c` of the discretization. Users write
//! only the forward expression (`div((1 + u²)·grad(u))`); every operation
//! applies its own chain rule, in the same order as the forward evaluation,
//! so the residual Jacobian falls out with the locality of the underlying
//! operators preserved.

use std::cell::RefCell;

use crate::error::{check_len, Error, Result};
use crate::sparse::SparseMatrix;

/// Point-evaluation maps of a discretization, all `N_p × N_c`.
///
/// `div_x`/`div_y` default to `mx`/`my`; staggered finite-difference grids
/// set them to the adjoint stencils so that `div ∘ grad` is the compact
/// five-point operator.
#[derive(Debug, Clone)]
pub struct DiscretizationOperators {
    pub m: SparseMatrix,
    pub mx: Option<SparseMatrix>,
    pub my: Option<SparseMatrix>,
    pub mxx: Option<SparseMatrix>,
    pub mxy: Option<SparseMatrix>,
    pub myy: Option<SparseMatrix>,
    pub div_x: Option<SparseMatrix>,
    pub div_y: Option<SparseMatrix>,
}

impl DiscretizationOperators {
    pub fn new(m: SparseMatrix) -> Self {
        Self {
            m,
            mx: None,
            my: None,
            mxx: None,
            mxy: None,
            myy: None,
            div_x: None,
            div_y: None,
        }
    }

    pub fn with_first_derivatives(mut self, mx: SparseMatrix, my: SparseMatrix) -> Result<Self> {
        self.check_shape(&mx)?;
        self.check_shape(&my)?;
        self.mx = Some(mx);
        self.my = Some(my);
        Ok(self)
    }

    pub fn with_second_derivatives(
        mut self,
        mxx: SparseMatrix,
        mxy: SparseMatrix,
        myy: SparseMatrix,
    ) -> Result<Self> {
        for m in [&mxx, &mxy, &myy] {
            self.check_shape(m)?;
        }
        self.mxx = Some(mxx);
        self.mxy = Some(mxy);
        self.myy = Some(myy);
        Ok(self)
    }

    pub fn with_divergence(mut self, div_x: SparseMatrix, div_y: SparseMatrix) -> Result<Self> {
        check_len("div_x rows", self.n_points(), div_x.rows())?;
        check_len("div_y rows", self.n_points(), div_y.rows())?;
        self.div_x = Some(div_x);
        self.div_y = Some(div_y);
        Ok(self)
    }

    fn check_shape(&self, m: &SparseMatrix) -> Result<()> {
        check_len("operator rows", self.m.rows(), m.rows())?;
        check_len("operator cols", self.m.cols(), m.cols())
    }

    pub fn n_points(&self) -> usize {
        self.m.rows()
    }

    pub fn n_coeffs(&self) -> usize {
        self.m.cols()
    }
}

/// Point values plus their Jacobian with respect to the coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
    jacobian: SparseMatrix,
    /// Set only for a field produced directly by [`from_coefficients`].
    coefficients: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: Field,
    pub y: Field,
}

thread_local! {
    static TRACE: RefCell<Option<Vec<&'static str>>> = const { RefCell::new(None) };
}

/// Starts recording the names of Jacobian rules as they are applied on this thread.
pub fn trace_begin() {
    TRACE.with(|t| *t.borrow_mut() = Some(Vec::new()));
}

/// Stops recording and returns the rule sequence.
pub fn trace_end() -> Vec<&'static str> {
    TRACE.with(|t| t.borrow_mut().take().unwrap_or_default())
}

fn trace(op: &'static str) {
    TRACE.with(|t| {
        if let Some(v) = t.borrow_mut().as_mut() {
            v.push(op);
        }
    });
}

impl Field {
    pub fn new(values: Vec<f64>, jacobian: SparseMatrix) -> Result<Self> {
        check_len("field jacobian rows", values.len(), jacobian.rows())?;
        Ok(Self {
            values,
            jacobian,
            coefficients: None,
        })
    }

    /// A field that does not depend on the coefficients.
    pub fn constant(values: Vec<f64>, n_coeffs: usize) -> Self {
        let n = values.len();
        Self {
            values,
            jacobian: SparseMatrix::zeros(n, n_coeffs),
            coefficients: None,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn jacobian(&self) -> &SparseMatrix {
        &self.jacobian
    }

    pub fn into_parts(self) -> (Vec<f64>, SparseMatrix) {
        (self.values, self.jacobian)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_coeffs(&self) -> usize {
        self.jacobian.cols()
    }

    fn derived(values: Vec<f64>, jacobian: SparseMatrix) -> Self {
        Self {
            values,
            jacobian,
            coefficients: None,
        }
    }

    fn check_compatible(&self, other: &Field) -> Result<()> {
        if self.len() != other.len() || self.n_coeffs() != other.n_coeffs() {
            return Err(Error::Shape(format!(
                "fields of shape {}x{} and {}x{}",
                self.len(),
                self.n_coeffs(),
                other.len(),
                other.n_coeffs()
            )));
        }
        Ok(())
    }
}

/// `u = M c`, with Jacobian `M`.
pub fn from_coefficients(ops: &DiscretizationOperators, c: &[f64]) -> Result<Field> {
    check_len("from_coefficients", ops.n_coeffs(), c.len())?;
    trace("from_coefficients");
    Ok(Field {
        values: ops.m.spmv(c)?,
        jacobian: ops.m.clone(),
        coefficients: Some(c.to_vec()),
    })
}

/// Applies a fixed linear map `A`: values `A f`, Jacobian `A J_f`.
pub fn apply(a: &SparseMatrix, f: &Field) -> Result<Field> {
    trace("apply");
    Ok(Field::derived(a.spmv(&f.values)?, a.matmul(&f.jacobian)?))
}

/// Differentiates through the value map: for a coefficient field this is
/// `D c`; otherwise the value map must be the identity (point values are
/// the coefficients) and the result is `D f`.
fn differentiate(ops: &DiscretizationOperators, d: &SparseMatrix, f: &Field) -> Result<Field> {
    if let Some(c) = &f.coefficients {
        check_len("coefficient field", d.cols(), c.len())?;
        return Ok(Field::derived(d.spmv(c)?, d.clone()));
    }
    if ops.m.is_identity() {
        return Ok(Field::derived(d.spmv(&f.values)?, d.matmul(&f.jacobian)?));
    }
    Err(Error::InvalidInput(
        "derivatives of derived fields need an identity value map".into(),
    ))
}

pub fn grad(ops: &DiscretizationOperators, f: &Field) -> Result<VectorField> {
    let mx = ops.mx.as_ref().ok_or(Error::MissingOperator("M_x"))?;
    let my = ops.my.as_ref().ok_or(Error::MissingOperator("M_y"))?;
    trace("grad");
    Ok(VectorField {
        x: differentiate(ops, mx, f)?,
        y: differentiate(ops, my, f)?,
    })
}

/// `∂²/∂x² + ∂²/∂y²` through the second-derivative maps of the discretization.
pub fn laplacian(ops: &DiscretizationOperators, f: &Field) -> Result<Field> {
    let mxx = ops.mxx.as_ref().ok_or(Error::MissingOperator("M_xx"))?;
    let myy = ops.myy.as_ref().ok_or(Error::MissingOperator("M_yy"))?;
    trace("laplacian");
    add(&differentiate(ops, mxx, f)?, &differentiate(ops, myy, f)?)
}

/// `∇·v`: values `Dx v_x + Dy v_y`, Jacobian `Dx J_vx + Dy J_vy`.
pub fn div(ops: &DiscretizationOperators, v: &VectorField) -> Result<Field> {
    let dx = ops
        .div_x
        .as_ref()
        .or(ops.mx.as_ref())
        .ok_or(Error::MissingOperator("M_x"))?;
    let dy = ops
        .div_y
        .as_ref()
        .or(ops.my.as_ref())
        .ok_or(Error::MissingOperator("M_y"))?;
    if !ops.m.is_identity() {
        return Err(Error::InvalidInput(
            "divergence of a derived field needs an identity value map".into(),
        ));
    }
    v.x.check_compatible(&v.y)?;
    trace("div");
    let values: Vec<f64> = dx
        .spmv(&v.x.values)?
        .into_iter()
        .zip(dy.spmv(&v.y.values)?)
        .map(|(a, b)| a + b)
        .collect();
    let jac = dx.matmul(&v.x.jacobian)?.add(&dy.matmul(&v.y.jacobian)?)?;
    Ok(Field::derived(values, jac))
}

/// Pointwise product: Jacobian `diag(g) J_f + diag(f) J_g`.
pub fn mul(f: &Field, g: &Field) -> Result<Field> {
    f.check_compatible(g)?;
    trace("mul");
    let values = f.values.iter().zip(&g.values).map(|(a, b)| a * b).collect();
    let jac = f
        .jacobian
        .diag_left_mul(&g.values)?
        .add(&g.jacobian.diag_left_mul(&f.values)?)?;
    Ok(Field::derived(values, jac))
}

/// Scales each component of a vector field pointwise by a scalar field.
pub fn mul_vector(f: &Field, v: &VectorField) -> Result<VectorField> {
    Ok(VectorField {
        x: mul(f, &v.x)?,
        y: mul(f, &v.y)?,
    })
}

/// `φ(f)` from precomputed pointwise values and derivatives.
pub fn map_pointwise(f: &Field, values: Vec<f64>, derivatives: Vec<f64>) -> Result<Field> {
    check_len("pointwise values", f.len(), values.len())?;
    check_len("pointwise derivatives", f.len(), derivatives.len())?;
    if let Some(i) = values
        .iter()
        .zip(&derivatives)
        .position(|(v, d)| !v.is_finite() || !d.is_finite())
    {
        return Err(Error::Domain(format!(
            "pointwise map is not finite at point {i} (input {})",
            f.values[i]
        )));
    }
    trace("unary");
    let jac = f.jacobian.diag_left_mul(&derivatives)?;
    Ok(Field::derived(values, jac))
}

/// `φ(f)` with Jacobian `diag(φ′(f)) J_f`.
pub fn unary(f: &Field, phi: impl Fn(f64) -> f64, dphi: impl Fn(f64) -> f64) -> Result<Field> {
    let values = f.values.iter().map(|&x| phi(x)).collect();
    let derivs = f.values.iter().map(|&x| dphi(x)).collect();
    map_pointwise(f, values, derivs)
}

pub fn add(f: &Field, g: &Field) -> Result<Field> {
    f.check_compatible(g)?;
    trace("add");
    let values = f.values.iter().zip(&g.values).map(|(a, b)| a + b).collect();
    Ok(Field::derived(values, f.jacobian.add(&g.jacobian)?))
}

pub fn sub(f: &Field, g: &Field) -> Result<Field> {
    f.check_compatible(g)?;
    trace("sub");
    let values = f.values.iter().zip(&g.values).map(|(a, b)| a - b).collect();
    Ok(Field::derived(values, f.jacobian.sub(&g.jacobian)?))
}

/// `s + f`; the Jacobian is unchanged.
pub fn add_scalar(f: &Field, s: f64) -> Field {
    trace("add_scalar");
    Field::derived(f.values.iter().map(|v| v + s).collect(), f.jacobian.clone())
}

/// `f + b` for a coefficient-independent vector `b`.
pub fn add_constant(f: &Field, b: &[f64]) -> Result<Field> {
    check_len("add_constant", f.len(), b.len())?;
    trace("add_constant");
    Ok(Field::derived(
        f.values.iter().zip(b).map(|(v, s)| v + s).collect(),
        f.jacobian.clone(),
    ))
}

pub fn neg(f: &Field) -> Field {
    scale(f, -1.0)
}

pub fn scale(f: &Field, s: f64) -> Field {
    trace("scale");
    Field::derived(
        f.values.iter().map(|v| v * s).collect(),
        f.jacobian.scale(s),
    )
}

/// Pointwise product with a coefficient-independent vector.
pub fn scale_rows(f: &Field, d: &[f64]) -> Result<Field> {
    check_len("scale_rows", f.len(), d.len())?;
    trace("scale_rows");
    Ok(Field::derived(
        f.values.iter().zip(d).map(|(v, s)| v * s).collect(),
        f.jacobian.diag_left_mul(d)?,
    ))
}
