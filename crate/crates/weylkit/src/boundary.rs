//! Boundary structure: the operator U and its J-unitary extension, the
//! boundary maps at both endpoints, endpoint-form inertia, case
//! classification and assembly of the decomposing boundary triplet.

use ndarray::s;

use crate::blockspace::{BlockSignature, INERTIA_TOL};
use crate::error::{Result, WkError};
use crate::linalg::{self, adjoint, c, cr, eye, hstack, norm2, vstack, zeros, CMat, I};
use crate::propagator::{self, PropOpts};
use crate::system::{EndpointDescriptor, SymmetricSystem};

pub const RELATION_TOL: f64 = 1e-12;

/// The boundary operator with blocks u1..u6 mapping H (+) Hhat (+) H into
/// Hhat (+) H. Rows r1 = (u1 u2 u3), r2 = (u4 u5 u6).
#[derive(Debug, Clone)]
pub struct BoundaryOperatorU {
    pub sig: BlockSignature,
    pub u: [CMat; 6],
}

impl BoundaryOperatorU {
    pub fn row1(&self) -> CMat {
        hstack(&[&self.u[0], &self.u[1], &self.u[2]])
    }

    pub fn row2(&self) -> CMat {
        hstack(&[&self.u[3], &self.u[4], &self.u[5]])
    }

    pub fn full(&self) -> CMat {
        vstack(&[&self.row1(), &self.row2()])
    }
}

/// The cos/sin family of boundary operators: U = [[0, I, 0], [cos B, 0, sin B]]
/// for a Hermitian parameter matrix B on H.
pub fn cos_sin_u(sig: BlockSignature, b_param: &CMat) -> Result<BoundaryOperatorU> {
    let (np, nh) = (sig.nu_plus, sig.nu_hat);
    if b_param.dim() != (np, np) {
        return Err(WkError::ShapeMismatch("cos/sin parameter must be nu_plus square".into()));
    }
    linalg::require_hermitian(b_param, 1e-12)?;
    let (vals, vecs) = linalg::eigh(b_param)?;
    let mut cos_d = zeros(np, np);
    let mut sin_d = zeros(np, np);
    for k in 0..np {
        cos_d[(k, k)] = cr(vals[k].cos());
        sin_d[(k, k)] = cr(vals[k].sin());
    }
    let cos_b = vecs.dot(&cos_d).dot(&adjoint(&vecs));
    let sin_b = vecs.dot(&sin_d).dot(&adjoint(&vecs));
    Ok(BoundaryOperatorU {
        sig,
        u: [
            zeros(nh, np),
            eye(nh),
            zeros(nh, np),
            cos_b,
            zeros(np, nh),
            sin_b,
        ],
    })
}

/// Extract the boundary operator from the last two block rows of a given
/// J-unitary matrix.
pub fn u_from_j_unitary(sig: BlockSignature, u_tilde: &CMat) -> BoundaryOperatorU {
    let (np, nh) = (sig.nu_plus, sig.nu_hat);
    let n = sig.n();
    BoundaryOperatorU {
        sig,
        u: [
            u_tilde.slice(s![np..np + nh, 0..np]).to_owned(),
            u_tilde.slice(s![np..np + nh, np..np + nh]).to_owned(),
            u_tilde.slice(s![np..np + nh, np + nh..n]).to_owned(),
            u_tilde.slice(s![np + nh..n, 0..np]).to_owned(),
            u_tilde.slice(s![np + nh..n, np..np + nh]).to_owned(),
            u_tilde.slice(s![np + nh..n, np + nh..n]).to_owned(),
        ],
    }
}

/// Check shapes, surjectivity and the defining relations of U. Returns the
/// operator on success; the failing relation id otherwise.
pub fn validate_u(sig: BlockSignature, u: [CMat; 6]) -> Result<BoundaryOperatorU> {
    let (np, nh) = (sig.nu_plus, sig.nu_hat);
    let shapes = [
        (nh, np),
        (nh, nh),
        (nh, np),
        (np, np),
        (np, nh),
        (np, np),
    ];
    for (k, (m, want)) in u.iter().zip(shapes.iter()).enumerate() {
        if m.dim() != *want {
            return Err(WkError::ShapeMismatch(format!(
                "u{} has shape {:?}, expected {:?}",
                k + 1,
                m.dim(),
                want
            )));
        }
    }
    let op = BoundaryOperatorU { sig, u };
    let [u1, u2, u3, u4, u5, u6] = &op.u;
    let scale = norm2(&op.full()).max(1.0);

    let rank = linalg::rank(&op.full(), 1e-10)?;
    if rank != sig.nu_minus() {
        return Err(WkError::RelationViolated {
            relation: "3.17.2 (ran U)",
            residual: (sig.nu_minus() - rank) as f64,
        });
    }
    // i u2 u2* - u1 u3* + u3 u1* = i I
    let r1 = &u2.dot(&adjoint(u2)).mapv(|z| z * I) - &u1.dot(&adjoint(u3)) + u3.dot(&adjoint(u1))
        - eye(nh).mapv(|z| z * I);
    let res1 = norm2(&r1);
    if res1 > RELATION_TOL * scale * scale {
        return Err(WkError::RelationViolated {
            relation: "3.17.3a",
            residual: res1,
        });
    }
    // i u5 u2* - u4 u3* + u6 u1* = 0
    let r2 = &u5.dot(&adjoint(u2)).mapv(|z| z * I) - &u4.dot(&adjoint(u3)) + u6.dot(&adjoint(u1));
    let res2 = norm2(&r2);
    if res2 > RELATION_TOL * scale * scale {
        return Err(WkError::RelationViolated {
            relation: "3.17.3b",
            residual: res2,
        });
    }
    // i u5 u5* + u6 u4* - u4 u6* = 0
    let r3 = &u5.dot(&adjoint(u5)).mapv(|z| z * I) + &u6.dot(&adjoint(u4)) - u4.dot(&adjoint(u6));
    let res3 = norm2(&r3);
    if res3 > RELATION_TOL * scale * scale {
        return Err(WkError::RelationViolated {
            relation: "3.17.4",
            residual: res3,
        });
    }
    Ok(op)
}

/// U together with its J-unitary extension and the boundary-row views.
#[derive(Debug, Clone)]
pub struct ExtendedU {
    pub u: BoundaryOperatorU,
    pub u_tilde: CMat,
}

impl ExtendedU {
    /// Rows for Gamma_{0a} (the extension row block).
    pub fn gamma_0a(&self) -> CMat {
        self.u_tilde.slice(s![0..self.u.sig.nu_plus, ..]).to_owned()
    }

    /// Rows for the middle map Gamma-hat_a.
    pub fn gamma_hat_a(&self) -> CMat {
        let sig = self.u.sig;
        self.u_tilde
            .slice(s![sig.nu_plus..sig.nu_minus(), ..])
            .to_owned()
    }

    /// Rows for Gamma_{1a}.
    pub fn gamma_1a(&self) -> CMat {
        let sig = self.u.sig;
        self.u_tilde.slice(s![sig.nu_minus()..sig.n(), ..]).to_owned()
    }

    /// Apply the full boundary map at a: (Gamma_0a, Gamma-hat_a, Gamma_1a) y(a).
    pub fn gamma_a(&self, y_a: &CMat) -> (CMat, CMat, CMat) {
        let g = self.u_tilde.dot(y_a);
        let sig = self.u.sig;
        (
            g.slice(s![0..sig.nu_plus, ..]).to_owned(),
            g.slice(s![sig.nu_plus..sig.nu_minus(), ..]).to_owned(),
            g.slice(s![sig.nu_minus()..sig.n(), ..]).to_owned(),
        )
    }
}

/// Complete U to a J-unitary matrix. The missing row block r0 solves
/// U J r0^* = [0; I] together with the isotropy condition r0 J r0^* = 0;
/// the affine solution family is resolved by a canonical linear correction.
pub fn extend_u(u: BoundaryOperatorU) -> Result<ExtendedU> {
    let sig = u.sig;
    let j = crate::blockspace::build_j(&sig);
    let np = sig.nu_plus;
    let m = u.full().dot(&j);
    let mut target = zeros(sig.nu_minus(), np);
    for k in 0..np {
        target[(sig.nu_hat + k, k)] = cr(1.0);
    }
    let z_p = linalg::pinv(&m, 1e-12)?.dot(&target);
    let kernel = linalg::null_space(&m, 1e-12)?;
    if kernel.ncols() != np {
        return Err(WkError::ExtensionFailure(format!(
            "kernel of U J has dimension {}, expected {np}",
            kernel.ncols()
        )));
    }
    let q = adjoint(&kernel).dot(&j).dot(&kernel);
    if norm2(&q) > 1e-10 {
        return Err(WkError::ExtensionFailure(format!(
            "ker U is not J-neutral (residual {:.3e}); relations violated",
            norm2(&q)
        )));
    }
    let s_mat = adjoint(&z_p).dot(&j).dot(&z_p);
    let z = if norm2(&s_mat) < 1e-14 {
        z_p
    } else {
        let w = adjoint(&kernel).dot(&j).dot(&z_p);
        if linalg::cond2(&w) > 1e12 {
            return Err(WkError::ExtensionFailure(
                "correction system is singular".into(),
            ));
        }
        let g = linalg::solve(&adjoint(&w), &s_mat.mapv(|z| z * cr(0.5)))?;
        &z_p + &kernel.dot(&g)
    };
    let r0 = adjoint(&z);
    let u_tilde = vstack(&[&r0, &u.row1(), &u.row2()]);
    let res = norm2(&(adjoint(&u_tilde).dot(&j).dot(&u_tilde) - &j));
    if res > 1e-11 {
        return Err(WkError::ExtensionFailure(format!(
            "J-unitarity residual {res:.3e} after completion"
        )));
    }
    Ok(ExtendedU { u, u_tilde })
}

/// Residual of the identity
/// (J y(a), z(a)) = -(G1a y, G0a z) + (G0a y, G1a z) + i (Ghat y, Ghat z)
/// over the given data columns.
pub fn gamma_a_identity_residual(ext_u: &ExtendedU, j: &CMat, ys: &CMat, zs: &CMat) -> f64 {
    let (g0y, ghy, g1y) = ext_u.gamma_a(ys);
    let (g0z, ghz, g1z) = ext_u.gamma_a(zs);
    let lhs = adjoint(zs).dot(j).dot(ys);
    let rhs = adjoint(&g0z).dot(&g1y).mapv(|z| -z)
        + adjoint(&g1z).dot(&g0y)
        + adjoint(&ghz).dot(&ghy).mapv(|z| z * I);
    norm2(&(&lhs - &rhs))
}

/// Boundary maps and inertia indices at the endpoint b. `data_dim == 0`
/// models a trivial endpoint contribution (all decaying tails).
#[derive(Debug, Clone)]
pub struct EndpointForm {
    pub nb_plus: usize,
    pub nb_minus: usize,
    pub data_dim: usize,
    /// Gamma_{0b}: data -> C_b
    pub g0: CMat,
    /// Gamma-hat_b: data -> Hhat_b
    pub ghat: CMat,
    /// Gamma_{1b}: data -> C_b
    pub g1: CMat,
    /// Hermitian form matrix: [y, z]_b = i * (z-data)^* omega_h (y-data)
    pub omega_h: CMat,
}

impl EndpointForm {
    pub fn cb_dim(&self) -> usize {
        self.g0.nrows()
    }

    pub fn hat_dim(&self) -> usize {
        self.ghat.nrows()
    }

    pub fn sign(&self) -> f64 {
        if self.nb_plus >= self.nb_minus {
            1.0
        } else {
            -1.0
        }
    }

    /// Residual of the representation identity (the endpoint analogue of the
    /// Lagrange bracket) on given data columns.
    pub fn identity_residual(&self, ys: &CMat, zs: &CMat) -> f64 {
        if self.data_dim == 0 {
            return 0.0;
        }
        let lhs = adjoint(zs).dot(&self.omega_h).dot(ys).mapv(|z| z * I);
        let g0y = self.g0.dot(ys);
        let g0z = self.g0.dot(zs);
        let g1y = self.g1.dot(ys);
        let g1z = self.g1.dot(zs);
        let ghy = self.ghat.dot(ys);
        let ghz = self.ghat.dot(zs);
        let rhs = adjoint(&ghz).dot(&ghy).mapv(|z| z * I * cr(self.sign()))
            - adjoint(&g0z).dot(&g1y)
            + adjoint(&g1z).dot(&g0y);
        norm2(&(&lhs - &rhs))
    }
}

/// Decompose a Hermitian form into hyperbolic pairs plus a definite surplus:
/// omega = sign * ghat^* ghat + i g0^* g1 - i g1^* g0.
fn decompose_form(omega_h: &CMat) -> Result<EndpointForm> {
    let n = omega_h.nrows();
    let (vals, vecs) = linalg::eigh(omega_h)?;
    let cut = INERTIA_TOL * norm2(omega_h).max(1.0);
    let mut pos: Vec<usize> = (0..n).filter(|&i| vals[i] > cut).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| vals[i] < -cut).collect();
    // strongest directions first
    pos.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
    neg.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
    let p = pos.len();
    let q = neg.len();
    let cb = p.min(q);
    let surplus = p.max(q) - cb;
    let mut g0 = zeros(cb, n);
    let mut g1 = zeros(cb, n);
    let mut ghat = zeros(surplus, n);
    let row = |idx: usize, scale: f64| -> CMat {
        let v = vecs.column(idx).mapv(|z| z.conj() * cr(scale));
        v.insert_axis(ndarray::Axis(0))
    };
    for k in 0..cb {
        let a_row = row(pos[k], vals[pos[k]].sqrt());
        let b_row = row(neg[k], (-vals[neg[k]]).sqrt());
        let g0_row = (&a_row + &b_row).mapv(|z| z / cr(2.0_f64.sqrt()));
        let g1_row = (&a_row - &b_row).mapv(|z| z * c(0.0, -1.0) / cr(2.0_f64.sqrt()));
        g0.row_mut(k).assign(&g0_row.row(0));
        g1.row_mut(k).assign(&g1_row.row(0));
    }
    let majority = if p >= q { &pos } else { &neg };
    for (r, &idx) in majority.iter().skip(cb).enumerate() {
        let scale = vals[idx].abs().sqrt();
        ghat.row_mut(r).assign(&row(idx, scale).row(0));
    }
    Ok(EndpointForm {
        nb_plus: p,
        nb_minus: q,
        data_dim: n,
        g0,
        ghat,
        g1,
        omega_h: omega_h.clone(),
    })
}

/// Construct the endpoint form of a system. Regular endpoints carry the full
/// value form; constant tails must have trivial endpoint inertia; declared
/// abstract forms are decomposed like regular ones.
pub fn build_endpoint_form(sys: &SymmetricSystem, opts: &PropOpts) -> Result<EndpointForm> {
    match &sys.endpoint {
        EndpointDescriptor::Regular { .. } => {
            let omega = sys.j.mapv(|z| z * c(0.0, -1.0));
            decompose_form(&omega)
        }
        EndpointDescriptor::AbstractForm { omega_b, .. } => decompose_form(omega_b),
        EndpointDescriptor::ConstantTail { .. } => {
            let (np, nm) = propagator::deficiency_indices(sys, opts)?;
            let nb_plus = np - sys.sig.nu_plus;
            let nb_minus = nm - sys.sig.nu_minus();
            if nb_plus > 0 || nb_minus > 0 {
                return Err(WkError::UnsupportedEndpoint(format!(
                    "constant tail with endpoint inertia ({nb_plus}, {nb_minus}); declare an abstract form instead"
                )));
            }
            Ok(EndpointForm {
                nb_plus: 0,
                nb_minus: 0,
                data_dim: 0,
                g0: zeros(0, 0),
                ghat: zeros(0, 0),
                g1: zeros(0, 0),
                omega_h: zeros(0, 0),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseTag {
    Case1,
    Case2,
    EqualIndices,
}

/// Classify the index regime. `OutOfScope` marks n_minus < n_plus, the
/// regime handled by the companion theory.
pub fn classify_case(sig: BlockSignature, form: &EndpointForm) -> Result<CaseTag> {
    let nu_hat = sig.nu_hat as i64;
    let d = form.nb_plus as i64 - form.nb_minus as i64;
    if nu_hat == d {
        return Ok(CaseTag::EqualIndices);
    }
    if nu_hat > d && d > 0 {
        return Ok(CaseTag::Case1);
    }
    if d <= 0 {
        // nu_hat != d here
        return Ok(CaseTag::Case2);
    }
    Err(WkError::OutOfScope(format!(
        "nu_hat = {nu_hat} < nb_plus - nb_minus = {d} implies n_minus < n_plus"
    )))
}

/// Internal assembly style: Case-1-type maps (with the split of Hhat) or
/// Case-2-type maps. Equal indices reuse whichever style matches the sign of
/// nb_plus - nb_minus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseStyle {
    Split,
    Plain,
}

/// Row maps acting on joint boundary data (y(a), endpoint data).
#[derive(Debug, Clone)]
pub struct BoundaryRows {
    pub a_part: CMat,
    pub b_part: CMat,
}

impl BoundaryRows {
    pub fn rows(&self) -> usize {
        self.a_part.nrows()
    }

    /// Apply to columns with values `ya` at a and endpoint data `yb`.
    pub fn apply(&self, ya: &CMat, yb: Option<&CMat>) -> CMat {
        let mut out = self.a_part.dot(ya);
        if self.b_part.ncols() > 0 {
            let yb = yb.expect("endpoint data required");
            out = &out + &self.b_part.dot(yb);
        }
        out
    }

    pub fn joint(&self) -> CMat {
        hstack(&[&self.a_part, &self.b_part])
    }

    fn stack(parts: &[&BoundaryRows]) -> BoundaryRows {
        BoundaryRows {
            a_part: vstack(&parts.iter().map(|p| &p.a_part).collect::<Vec<_>>()),
            b_part: vstack(&parts.iter().map(|p| &p.b_part).collect::<Vec<_>>()),
        }
    }
}

/// Dimension bookkeeping for one assembled triplet.
#[derive(Debug, Clone, Copy)]
pub struct TripletDims {
    pub nu_plus: usize,
    pub nu_hat: usize,
    pub nb_plus: usize,
    pub nb_minus: usize,
    /// dim Hhat_1 (split style) -- the part of Hhat identified with the
    /// endpoint surplus space.
    pub h1_hat: usize,
    /// dim Hhat_2 (split style); equals nu_hat for plain style.
    pub h2_hat: usize,
    pub cb: usize,
    /// endpoint surplus dimension (plain style: nb_minus - nb_plus).
    pub hb_hat: usize,
    pub h0_dim: usize,
    pub h1_dim: usize,
    /// reduced parameter spaces: dot H0 and dot H1 = C_b
    pub red0_dim: usize,
    pub red_cb_offset: usize,
}

impl TripletDims {
    /// Coordinate extraction of C_b inside dot H0.
    pub fn red_p1(&self) -> CMat {
        let mut m = zeros(self.cb, self.red0_dim);
        for k in 0..self.cb {
            m[(k, self.red_cb_offset + k)] = cr(1.0);
        }
        m
    }

    /// Coordinate extraction of the orthogonal complement of C_b in dot H0.
    pub fn red_p2(&self) -> CMat {
        let rest = self.red0_dim - self.cb;
        let mut m = zeros(rest, self.red0_dim);
        let mut r = 0;
        for kcol in 0..self.red0_dim {
            if kcol < self.red_cb_offset || kcol >= self.red_cb_offset + self.cb {
                m[(r, kcol)] = cr(1.0);
                r += 1;
            }
        }
        m
    }

    /// Embedding of C_b into dot H0.
    pub fn red_embed_cb(&self) -> CMat {
        adjoint(&self.red_p1())
    }
}

/// The decomposing boundary triplet: assembled Gamma_0/Gamma_1 on joint
/// boundary data plus all row sets used by the solve machinery.
#[derive(Debug, Clone)]
pub struct DecomposingTriplet {
    pub case: CaseTag,
    pub style: CaseStyle,
    pub dims: TripletDims,
    pub gamma0: BoundaryRows,
    pub gamma1: BoundaryRows,
    /// row indices of H2 = H0 (-) H1 inside the Gamma_0 codomain
    pub h2_rows: Vec<usize>,
    /// embedding of the Gamma_1 codomain into the Gamma_0 codomain
    pub embed_h1: CMat,
    pub z_plus_rows: BoundaryRows,
    pub z_minus_rows: BoundaryRows,
    pub m_plus_rows: BoundaryRows,
    pub m_minus_rows: BoundaryRows,
    /// rows computing (Gamma_0a + Gamma-hat_a)
    pub h0_rows: BoundaryRows,
    pub psi_plus_rows: BoundaryRows,
    pub psi_minus_rows: BoundaryRows,
    /// additive shift i P injected into the Psi_+ codomain
    pub psi_plus_shift: CMat,
    /// additive shift (i/2) P_hat for m_0
    pub m0_shift: CMat,
}

pub fn build_triplet(
    sys: &SymmetricSystem,
    ext_u: &ExtendedU,
    form: &EndpointForm,
) -> Result<DecomposingTriplet> {
    let sig = sys.sig;
    let case = classify_case(sig, form)?;
    let d = form.nb_plus as i64 - form.nb_minus as i64;
    let style = if d > 0 { CaseStyle::Split } else { CaseStyle::Plain };

    let n = sig.n();
    let (np, nh) = (sig.nu_plus, sig.nu_hat);
    let dd = form.data_dim;
    let g0a = BoundaryRows {
        a_part: ext_u.gamma_0a(),
        b_part: zeros(np, dd),
    };
    let ghat_full = ext_u.gamma_hat_a();
    let g1a = BoundaryRows {
        a_part: ext_u.gamma_1a(),
        b_part: zeros(np, dd),
    };
    let b_rows = |m: &CMat| BoundaryRows {
        a_part: zeros(m.nrows(), n),
        b_part: m.clone(),
    };

    let mut m0_shift = zeros(sig.nu_minus(), sig.nu_minus());
    for k in 0..nh {
        m0_shift[(np + k, np + k)] = c(0.0, 0.5);
    }
    let h0_rows = BoundaryRows::stack(&[
        &g0a,
        &BoundaryRows {
            a_part: ghat_full.clone(),
            b_part: zeros(nh, dd),
        },
    ]);

    match style {
        CaseStyle::Split => {
            let h1_hat = d as usize;
            if h1_hat > nh || form.hat_dim() != h1_hat || form.cb_dim() != form.nb_minus {
                return Err(WkError::CaseMismatch(format!(
                    "split style needs dim Hhat_1 = {h1_hat} <= nu_hat and matching endpoint spaces"
                )));
            }
            let h2_hat = nh - h1_hat;
            let cb = form.nb_minus;
            let ghat_a1 = ghat_full.slice(s![0..h1_hat, ..]).to_owned();
            let ghat_a2 = ghat_full.slice(s![h1_hat..nh, ..]).to_owned();

            let dims = TripletDims {
                nu_plus: np,
                nu_hat: nh,
                nb_plus: form.nb_plus,
                nb_minus: form.nb_minus,
                h1_hat,
                h2_hat,
                cb,
                hb_hat: h1_hat,
                h0_dim: np + nh + cb,
                h1_dim: np + h1_hat + cb,
                red0_dim: h2_hat + cb,
                red_cb_offset: h2_hat,
            };

            // Gamma_0 = {-G1a y + i(Ghat_a1 - Ghat_b) y, i Ghat_a2 y, G0b y}
            let row_h = BoundaryRows {
                a_part: g1a.a_part.mapv(|z| -z),
                b_part: zeros(np, dd),
            };
            let row_h1 = BoundaryRows {
                a_part: ghat_a1.mapv(|z| z * I),
                b_part: form.ghat.mapv(|z| -z * I),
            };
            let row_h2 = BoundaryRows {
                a_part: ghat_a2.mapv(|z| z * I),
                b_part: zeros(h2_hat, dd),
            };
            let row_cb0 = b_rows(&form.g0);
            let gamma0 = BoundaryRows::stack(&[&row_h, &row_h1, &row_h2, &row_cb0]);

            // Gamma_1 = {G0a y + (Ghat_a1 + Ghat_b)/2 y, -G1b y}
            let row1_h = g0a.clone();
            let row1_h1 = BoundaryRows {
                a_part: ghat_a1.mapv(|z| z * cr(0.5)),
                b_part: form.ghat.mapv(|z| z * cr(0.5)),
            };
            let row1_cb = b_rows(&form.g1.mapv(|z| -z));
            let gamma1 = BoundaryRows::stack(&[&row1_h, &row1_h1, &row1_cb]);

            let h2_rows: Vec<usize> = (np + h1_hat..np + nh).collect();
            let mut embed_h1 = zeros(dims.h0_dim, dims.h1_dim);
            for k in 0..np + h1_hat {
                embed_h1[(k, k)] = cr(1.0);
            }
            for k in 0..cb {
                embed_h1[(np + nh + k, np + h1_hat + k)] = cr(1.0);
            }

            let z_plus_rows = BoundaryRows::stack(&[&row_h, &row_h1, &row_cb0]);
            let z_minus_rows = BoundaryRows::stack(&[&row_h, &row_h1, &row_h2, &row_cb0]);
            let m_row_h1 = BoundaryRows {
                a_part: ghat_a1.mapv(|z| z * cr(0.5)),
                b_part: form.ghat.mapv(|z| z * cr(0.5)),
            };
            let m_row_h2 = BoundaryRows {
                a_part: ghat_a2.clone(),
                b_part: zeros(h2_hat, dd),
            };
            let m_row_g1 = b_rows(&form.g1.mapv(|z| -z));
            let m_plus_rows = BoundaryRows::stack(&[&g0a, &m_row_h1, &m_row_h2, &m_row_g1]);
            let m_minus_rows = BoundaryRows::stack(&[&g0a, &m_row_h1, &m_row_g1]);

            let psi_plus_rows = BoundaryRows::stack(&[&m_row_h2, &m_row_g1]);
            let psi_minus_rows = m_row_g1.clone();
            let mut psi_plus_shift = zeros(dims.red0_dim, sig.nu_minus());
            for k in 0..h2_hat {
                psi_plus_shift[(k, np + h1_hat + k)] = I;
            }

            Ok(DecomposingTriplet {
                case,
                style,
                dims,
                gamma0,
                gamma1,
                h2_rows,
                embed_h1,
                z_plus_rows,
                z_minus_rows,
                m_plus_rows,
                m_minus_rows,
                h0_rows,
                psi_plus_rows,
                psi_minus_rows,
                psi_plus_shift,
                m0_shift,
            })
        }
        CaseStyle::Plain => {
            let cb = form.nb_plus.min(form.nb_minus);
            let hb_hat = form.nb_minus - form.nb_plus;
            if form.cb_dim() != cb || form.hat_dim() != hb_hat {
                return Err(WkError::CaseMismatch(
                    "endpoint form dimensions do not match the plain-style triplet".into(),
                ));
            }
            let dims = TripletDims {
                nu_plus: np,
                nu_hat: nh,
                nb_plus: form.nb_plus,
                nb_minus: form.nb_minus,
                h1_hat: 0,
                h2_hat: nh,
                cb,
                hb_hat,
                h0_dim: np + nh + cb + hb_hat,
                h1_dim: np + cb,
                red0_dim: nh + cb + hb_hat,
                red_cb_offset: nh,
            };

            // Gamma_0 = {-G1a y, i Ghat_a y, (G0b + Ghat_b) y}
            let row_h = BoundaryRows {
                a_part: g1a.a_part.mapv(|z| -z),
                b_part: zeros(np, dd),
            };
            let row_hat = BoundaryRows {
                a_part: ghat_full.mapv(|z| z * I),
                b_part: zeros(nh, dd),
            };
            let row_cb0 = b_rows(&form.g0);
            let row_hb = b_rows(&form.ghat);
            let gamma0 = BoundaryRows::stack(&[&row_h, &row_hat, &row_cb0, &row_hb]);

            // Gamma_1 = {G0a y, -G1b y}
            let row1_cb = b_rows(&form.g1.mapv(|z| -z));
            let gamma1 = BoundaryRows::stack(&[&g0a, &row1_cb]);

            let mut h2_rows: Vec<usize> = (np..np + nh).collect();
            h2_rows.extend(np + nh + cb..dims.h0_dim);
            let mut embed_h1 = zeros(dims.h0_dim, dims.h1_dim);
            for k in 0..np {
                embed_h1[(k, k)] = cr(1.0);
            }
            for k in 0..cb {
                embed_h1[(np + nh + k, np + k)] = cr(1.0);
            }

            let z_plus_rows = BoundaryRows::stack(&[&row_h, &row_cb0]);
            let z_minus_rows = BoundaryRows::stack(&[&row_h, &row_hat, &row_cb0, &row_hb]);
            let m_row_hat = BoundaryRows {
                a_part: ghat_full.clone(),
                b_part: zeros(nh, dd),
            };
            let m_row_g1 = b_rows(&form.g1.mapv(|z| -z));
            let m_row_ghb = b_rows(&form.ghat.mapv(|z| -z * I));
            let m_plus_rows = BoundaryRows::stack(&[&g0a, &m_row_hat, &m_row_g1, &m_row_ghb]);
            let m_minus_rows = BoundaryRows::stack(&[&g0a, &m_row_g1]);

            let psi_plus_rows = BoundaryRows::stack(&[&m_row_hat, &m_row_g1, &m_row_ghb]);
            let psi_minus_rows = m_row_g1.clone();
            let mut psi_plus_shift = zeros(dims.red0_dim, sig.nu_minus());
            for k in 0..nh {
                psi_plus_shift[(k, np + k)] = I;
            }

            Ok(DecomposingTriplet {
                case,
                style,
                dims,
                gamma0,
                gamma1,
                h2_rows,
                embed_h1,
                z_plus_rows,
                z_minus_rows,
                m_plus_rows,
                m_minus_rows,
                h0_rows,
                psi_plus_rows,
                psi_minus_rows,
                psi_plus_shift,
                m0_shift,
            })
        }
    }
}

impl DecomposingTriplet {
    /// Rank check: the stacked (Gamma_0; Gamma_1) map must cover the whole
    /// boundary space.
    pub fn surjectivity_ok(&self) -> Result<bool> {
        let stacked = vstack(&[&self.gamma0.joint(), &self.gamma1.joint()]);
        let rank = linalg::rank(&stacked, 1e-10)?;
        Ok(rank == self.dims.h0_dim + self.dims.h1_dim)
    }

    /// Residual of the abstract Green identity against the boundary form of
    /// the Lagrange identity, on joint boundary-data columns
    /// (ya, endpoint data).
    pub fn green_identity_residual(
        &self,
        j: &CMat,
        form: &EndpointForm,
        ya: &CMat,
        yb: Option<&CMat>,
        za: &CMat,
        zb: Option<&CMat>,
    ) -> f64 {
        let g0y = self.gamma0.apply(ya, yb);
        let g0z = self.gamma0.apply(za, zb);
        let g1y = self.embed_h1.dot(&self.gamma1.apply(ya, yb));
        let g1z = self.embed_h1.dot(&self.gamma1.apply(za, zb));
        let mut p2 = zeros(self.h2_rows.len(), self.dims.h0_dim);
        for (r, &idx) in self.h2_rows.iter().enumerate() {
            p2[(r, idx)] = cr(1.0);
        }
        let p2y = p2.dot(&g0y);
        let p2z = p2.dot(&g0z);
        let rhs = adjoint(&g0z).dot(&g1y) - adjoint(&g1z).dot(&g0y)
            + adjoint(&p2z).dot(&p2y).mapv(|z| -z * I);
        // [y, z]_b - (J y(a), z(a))
        let bracket = if form.data_dim > 0 {
            adjoint(zb.expect("data")).dot(&form.omega_h).dot(yb.expect("data")).mapv(|z| z * I)
        } else {
            zeros(ya.ncols(), ya.ncols())
        };
        let lhs = &bracket - &adjoint(za).dot(j).dot(ya);
        norm2(&(&lhs - &rhs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockspace::build_j;
    use crate::system::{free_schrodinger_coeffs, MatrixSampler};
    use rand::{Rng, SeedableRng};

    fn rand_cmat(rng: &mut impl Rng, r: usize, c_: usize) -> CMat {
        let mut m = zeros(r, c_);
        for i in 0..r {
            for j in 0..c_ {
                m[(i, j)] = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        m
    }

    pub fn random_j_unitary(sig: BlockSignature, rng: &mut impl Rng) -> CMat {
        let n = sig.n();
        let h = {
            let m = rand_cmat(rng, n, n);
            linalg::herm_part(&m)
        };
        let j = build_j(&sig);
        linalg::expm(&j.dot(&h))
    }

    #[test]
    fn cos_sin_family_is_valid_and_extends() {
        let sig = BlockSignature::new(1, 1).unwrap();
        // B = 0
        let u = cos_sin_u(sig, &zeros(1, 1)).unwrap();
        let u = validate_u(sig, u.u).unwrap();
        let ext = extend_u(u).unwrap();
        let expect = ndarray::array![
            [cr(0.0), cr(0.0), cr(-1.0)],
            [cr(0.0), cr(1.0), cr(0.0)],
            [cr(1.0), cr(0.0), cr(0.0)]
        ];
        assert!(norm2(&(&ext.u_tilde - &expect)) < 1e-12);

        // general Hermitian parameter
        let bp = ndarray::array![[cr(0.8)]];
        let u = cos_sin_u(sig, &bp).unwrap();
        let u = validate_u(sig, u.u).unwrap();
        let ext = extend_u(u).unwrap();
        let (s, co) = (0.8_f64.sin(), 0.8_f64.cos());
        let expect = ndarray::array![
            [cr(s), cr(0.0), cr(-co)],
            [cr(0.0), cr(1.0), cr(0.0)],
            [cr(co), cr(0.0), cr(s)]
        ];
        assert!(norm2(&(&ext.u_tilde - &expect)) < 1e-12);
    }

    #[test]
    fn invalid_row_is_rejected() {
        let sig = BlockSignature::new(1, 1).unwrap();
        // u-row1 = (1, 0, 0): relation 3.17.3a gives 0 != iI
        let u = [
            eye(1),
            zeros(1, 1),
            zeros(1, 1),
            eye(1),
            zeros(1, 1),
            zeros(1, 1),
        ];
        assert!(matches!(
            validate_u(sig, u),
            Err(WkError::RelationViolated { .. })
        ));
    }

    #[test]
    fn random_j_unitaries_validate_and_extend() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for (np, nh) in [(1usize, 0usize), (1, 1), (2, 1)] {
            let sig = BlockSignature::new(np, nh).unwrap();
            let j = build_j(&sig);
            for _ in 0..10 {
                let w = random_j_unitary(sig, &mut rng);
                assert!(norm2(&(adjoint(&w).dot(&j).dot(&w) - &j)) < 1e-10);
                let u = u_from_j_unitary(sig, &w);
                let u = validate_u(sig, u.u).unwrap();
                let ext = extend_u(u).unwrap();
                let res = norm2(&(adjoint(&ext.u_tilde).dot(&j).dot(&ext.u_tilde) - &j));
                assert!(res < 1e-11, "extension residual {res}");
                // boundary identity on random data
                let ys = rand_cmat(&mut rng, sig.n(), 4);
                let zs = rand_cmat(&mut rng, sig.n(), 4);
                assert!(gamma_a_identity_residual(&ext, &j, &ys, &zs) < 1e-10);
            }
        }
    }

    #[test]
    fn gamma_a_values_for_pi_half_parameter() {
        // sin B = 1, cos B = 0 makes U-tilde the identity permutation block
        let sig = BlockSignature::new(1, 1).unwrap();
        let bp = ndarray::array![[cr(std::f64::consts::FRAC_PI_2)]];
        let u = cos_sin_u(sig, &bp).unwrap();
        let ext = extend_u(validate_u(sig, u.u).unwrap()).unwrap();
        assert!(norm2(&(&ext.u_tilde - &eye(3))) < 1e-12);
        let y = ndarray::array![[cr(2.0)], [cr(-1.0)], [cr(0.5)]];
        let (g0, gh, g1) = ext.gamma_a(&y);
        assert!((g0[(0, 0)] - cr(2.0)).norm() < 1e-12);
        assert!((gh[(0, 0)] - cr(-1.0)).norm() < 1e-12);
        assert!((g1[(0, 0)] - cr(0.5)).norm() < 1e-12);
        // zero data maps to zero
        let z = zeros(3, 1);
        let (g0, gh, g1) = ext.gamma_a(&z);
        assert!(norm2(&g0) + norm2(&gh) + norm2(&g1) < 1e-15);
    }

    #[test]
    fn phi_initial_matches_cos_sin_display() {
        let sig = BlockSignature::new(1, 1).unwrap();
        let bp = ndarray::array![[cr(0.0)]];
        let u = cos_sin_u(sig, &bp).unwrap();
        let phi0 = crate::propagator::phi_initial(&u);
        // [[sin B, 0], [0, 1], [-cos B, 0]] with B = 0
        let expect = ndarray::array![
            [cr(0.0), cr(0.0)],
            [cr(0.0), cr(1.0)],
            [cr(-1.0), cr(0.0)]
        ];
        assert!(norm2(&(&phi0 - &expect)) < 1e-14);
        // U-tilde phi(a) = [I; 0]
        let ext = extend_u(validate_u(sig, u.u).unwrap()).unwrap();
        let mapped = ext.u_tilde.dot(&phi0);
        let expect = ndarray::array![
            [cr(1.0), cr(0.0)],
            [cr(0.0), cr(1.0)],
            [cr(0.0), cr(0.0)]
        ];
        assert!(norm2(&(&mapped - &expect)) < 1e-12);
    }

    #[test]
    fn endpoint_form_regular_inertia_and_identity() {
        let sig = BlockSignature::new(1, 1).unwrap();
        let (b, d) = (zeros(3, 3), eye(3));
        let sys = SymmetricSystem::new(
            sig,
            0.0,
            EndpointDescriptor::Regular { b: 1.0 },
            MatrixSampler::Constant(b),
            MatrixSampler::Constant(d),
        )
        .unwrap();
        let form = build_endpoint_form(&sys, &PropOpts::default()).unwrap();
        assert_eq!((form.nb_plus, form.nb_minus), (2, 1));
        assert_eq!(form.cb_dim(), 1);
        assert_eq!(form.hat_dim(), 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let ys = rand_cmat(&mut rng, 3, 5);
        let zs = rand_cmat(&mut rng, 3, 5);
        assert!(form.identity_residual(&ys, &zs) < 1e-10);
    }

    #[test]
    fn abstract_form_diag_example() {
        // diag(1, 1, -1, 0, 0): inertia (2, 1), C_b 1-dim, Hhat_b 1-dim
        let mut omega = zeros(5, 5);
        omega[(0, 0)] = cr(1.0);
        omega[(1, 1)] = cr(1.0);
        omega[(2, 2)] = cr(-1.0);
        let form = decompose_form(&omega).unwrap();
        assert_eq!((form.nb_plus, form.nb_minus), (2, 1));
        assert_eq!(form.cb_dim(), 1);
        assert_eq!(form.hat_dim(), 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let ys = rand_cmat(&mut rng, 5, 6);
        let zs = rand_cmat(&mut rng, 5, 6);
        assert!(form.identity_residual(&ys, &zs) < 1e-10);
    }

    #[test]
    fn case_classification() {
        let mk_form = |p: usize, q: usize| {
            let n = 4;
            let mut omega = zeros(n, n);
            for k in 0..p {
                omega[(k, k)] = cr(1.0);
            }
            for k in 0..q {
                omega[(p + k, p + k)] = cr(-1.0);
            }
            decompose_form(&omega).unwrap()
        };
        // sig(1,1), regular-like (2,1): EqualIndices
        let sig = BlockSignature::new(1, 1).unwrap();
        assert_eq!(classify_case(sig, &mk_form(2, 1)).unwrap(), CaseTag::EqualIndices);
        // sig(1,1), (0,0): Case 2
        assert_eq!(classify_case(sig, &mk_form(0, 0)).unwrap(), CaseTag::Case2);
        // sig(1,2), (1,0): Case 1
        let sig12 = BlockSignature::new(1, 2).unwrap();
        assert_eq!(classify_case(sig12, &mk_form(1, 0)).unwrap(), CaseTag::Case1);
        // out of scope: nu_hat < d
        let sig10 = BlockSignature::new(1, 0).unwrap();
        assert!(matches!(
            classify_case(sig10, &mk_form(1, 0)),
            Err(WkError::OutOfScope(_))
        ));
    }

    #[test]
    fn triplet_green_identity_plain_trivial_endpoint() {
        // iy3-type half-line: trivial endpoint contribution
        let sig = BlockSignature::new(1, 1).unwrap();
        let mut b = zeros(3, 3);
        b[(1, 2)] = cr(1.0);
        b[(2, 1)] = cr(1.0);
        let mut dmat = zeros(3, 3);
        dmat[(0, 0)] = cr(1.0);
        let sys = SymmetricSystem::new(
            sig,
            0.0,
            EndpointDescriptor::ConstantTail {
                t0: 0.0,
                b_inf: b.clone(),
                delta_inf: dmat.clone(),
            },
            MatrixSampler::Constant(b),
            MatrixSampler::Constant(dmat),
        )
        .unwrap();
        let form = build_endpoint_form(&sys, &PropOpts::default()).unwrap();
        assert_eq!((form.nb_plus, form.nb_minus), (0, 0));
        let u = cos_sin_u(sig, &zeros(1, 1)).unwrap();
        let ext = extend_u(validate_u(sig, u.u).unwrap()).unwrap();
        let trip = build_triplet(&sys, &ext, &form).unwrap();
        assert_eq!(trip.case, CaseTag::Case2);
        assert_eq!((trip.dims.h0_dim, trip.dims.h1_dim), (2, 1));
        assert!(trip.surjectivity_ok().unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let ya = rand_cmat(&mut rng, 3, 6);
        let za = rand_cmat(&mut rng, 3, 6);
        let res = trip.green_identity_residual(&sys.j, &form, &ya, None, &za, None);
        assert!(res < 1e-10, "green identity residual {res}");
    }

    #[test]
    fn triplet_green_identity_regular_and_case1() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        // regular endpoint, sig(2,1): equal indices, split style
        let sig = BlockSignature::new(2, 1).unwrap();
        let n = sig.n();
        let sys = SymmetricSystem::new(
            sig,
            0.0,
            EndpointDescriptor::Regular { b: 1.0 },
            MatrixSampler::Constant(zeros(n, n)),
            MatrixSampler::Constant(eye(n)),
        )
        .unwrap();
        let form = build_endpoint_form(&sys, &PropOpts::default()).unwrap();
        let w = random_j_unitary(sig, &mut rng);
        let ext = extend_u(validate_u(sig, u_from_j_unitary(sig, &w).u).unwrap()).unwrap();
        let trip = build_triplet(&sys, &ext, &form).unwrap();
        assert_eq!(trip.case, CaseTag::EqualIndices);
        assert_eq!(trip.style, CaseStyle::Split);
        assert!(trip.surjectivity_ok().unwrap());
        let ya = rand_cmat(&mut rng, n, 8);
        let yb = rand_cmat(&mut rng, n, 8);
        let za = rand_cmat(&mut rng, n, 8);
        let zb = rand_cmat(&mut rng, n, 8);
        let res = trip.green_identity_residual(&sys.j, &form, &ya, Some(&yb), &za, Some(&zb));
        assert!(res < 1e-9, "green identity residual {res}");

        // genuine Case 1 via a declared abstract form: sig(1,2), inertia (1,0)
        let sig = BlockSignature::new(1, 2).unwrap();
        let n = sig.n();
        let mut omega = zeros(n, n);
        omega[(0, 0)] = cr(1.0);
        let sys = SymmetricSystem::new(
            sig,
            0.0,
            EndpointDescriptor::AbstractForm {
                t_cut: 1.0,
                omega_b: omega,
            },
            MatrixSampler::Constant(zeros(n, n)),
            MatrixSampler::Constant(eye(n)),
        )
        .unwrap();
        let form = build_endpoint_form(&sys, &PropOpts::default()).unwrap();
        assert_eq!((form.nb_plus, form.nb_minus), (1, 0));
        let w = random_j_unitary(sig, &mut rng);
        let ext = extend_u(validate_u(sig, u_from_j_unitary(sig, &w).u).unwrap()).unwrap();
        let trip = build_triplet(&sys, &ext, &form).unwrap();
        assert_eq!(trip.case, CaseTag::Case1);
        assert_eq!((trip.dims.h0_dim, trip.dims.h1_dim), (3, 2));
        assert!(trip.surjectivity_ok().unwrap());
        let ya = rand_cmat(&mut rng, n, 8);
        let yb = rand_cmat(&mut rng, n, 8);
        let za = rand_cmat(&mut rng, n, 8);
        let zb = rand_cmat(&mut rng, n, 8);
        let res = trip.green_identity_residual(&sys.j, &form, &ya, Some(&yb), &za, Some(&zb));
        assert!(res < 1e-9, "case-1 green identity residual {res}");
    }

    #[test]
    fn free_schrodinger_triplet_dims() {
        let sig = BlockSignature::new(1, 0).unwrap();
        let (b, d) = free_schrodinger_coeffs();
        let sys = SymmetricSystem::new(
            sig,
            0.0,
            EndpointDescriptor::Regular { b: 1.0 },
            MatrixSampler::Constant(b),
            MatrixSampler::Constant(d),
        )
        .unwrap();
        let form = build_endpoint_form(&sys, &PropOpts::default()).unwrap();
        assert_eq!((form.nb_plus, form.nb_minus), (1, 1));
        let u = cos_sin_u(sig, &zeros(1, 1)).unwrap();
        let ext = extend_u(validate_u(sig, u.u).unwrap()).unwrap();
        let trip = build_triplet(&sys, &ext, &form).unwrap();
        assert_eq!(trip.case, CaseTag::EqualIndices);
        assert_eq!((trip.dims.h0_dim, trip.dims.h1_dim), (2, 2));
    }
}
