//! The dihedral group D12 acting on the twelve pitch classes.
//!
//! Elements are written `T_i ∘ R^b`: the reflection `R: k ↦ −k (mod 12)`
//! mirrors through pitch class 0 and is applied first, then the
//! transposition `T_i: k ↦ k + i`. The 12-dimensional permutation
//! representation splits into seven real irreps (A1, B2, E1..E5), each with
//! multiplicity one; [`change_of_basis`] gives the row-orthonormal
//! intertwiner `U` for each of them.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::GroupError;
use crate::tensor::Tensor;

pub const ORDER: usize = 24;
pub const PITCH_CLASSES: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupElement {
    rotation: u8,
    reflected: bool,
}

impl GroupElement {
    pub const IDENTITY: Self = Self { rotation: 0, reflected: false };

    /// `T_i ∘ R^b`; the rotation is reduced mod 12.
    pub fn new(rotation: i64, reflected: bool) -> Self {
        Self { rotation: rotation.rem_euclid(12) as u8, reflected }
    }

    pub fn transposition(i: i64) -> Self {
        Self::new(i, false)
    }

    pub fn reflection() -> Self {
        Self::new(0, true)
    }

    /// All 24 elements; rotations first, then the reflected ones.
    pub fn all() -> impl Iterator<Item = Self> {
        (0..ORDER).map(Self::from_index)
    }

    pub fn from_index(idx: usize) -> Self {
        assert!(idx < ORDER, "group index {idx} out of range");
        Self { rotation: (idx % 12) as u8, reflected: idx >= 12 }
    }

    pub fn index(self) -> usize {
        self.rotation as usize + if self.reflected { 12 } else { 0 }
    }

    pub fn rotation(self) -> usize {
        self.rotation as usize
    }

    pub fn is_reflected(self) -> bool {
        self.reflected
    }

    /// `self ∘ other`: apply `other` first.
    ///
    /// Uses `R T_j = T_{−j} R`, so `(T_i R^a)(T_j R^b) = T_{i ± j} R^{a+b}`.
    pub fn compose(self, other: Self) -> Self {
        let j = other.rotation as i64;
        let shift = if self.reflected { -j } else { j };
        Self::new(self.rotation as i64 + shift, self.reflected ^ other.reflected)
    }

    pub fn inverse(self) -> Self {
        if self.reflected {
            // reflections are involutions
            self
        } else {
            Self::new(-(self.rotation as i64), false)
        }
    }

    /// Image of a pitch-class ordinal.
    pub fn act_ord(self, k: usize) -> Result<usize, GroupError> {
        if k >= PITCH_CLASSES {
            return Err(GroupError::OrdinalOutOfRange(k));
        }
        Ok(self.act(k))
    }

    pub(crate) fn act(self, k: usize) -> usize {
        let k = k as i64;
        let reflected = if self.reflected { -k } else { k };
        (reflected + self.rotation as i64).rem_euclid(12) as usize
    }

    /// Image of a pitch-class set, sorted.
    pub fn act_set(self, set: &[usize]) -> Result<Vec<usize>, GroupError> {
        let mut out = set.iter().map(|&k| self.act_ord(k)).collect::<Result<Vec<_>, _>>()?;
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// `D^perm(g)[j, i] = 1` iff `j = g(i)`.
    pub fn perm_matrix(self) -> Tensor {
        let mut m = Tensor::zeros(&[PITCH_CLASSES, PITCH_CLASSES]);
        for i in 0..PITCH_CLASSES {
            m.set(self.act(i), i, 1.0);
        }
        m
    }

    /// Applies `D^perm(g)` to every column of a 12×T matrix, i.e. row `i`
    /// of the input lands on row `g(i)`.
    pub fn permute_rows(self, m: &Tensor) -> Tensor {
        assert_eq!(m.rows(), PITCH_CLASSES);
        let cols = m.cols();
        let mut out = Tensor::zeros(&[PITCH_CLASSES, cols]);
        for i in 0..PITCH_CLASSES {
            let j = self.act(i);
            out.data_mut()[j * cols..(j + 1) * cols].copy_from_slice(m.row(i));
        }
        out
    }

    pub fn conjugacy_class(self) -> ConjugacyClass {
        let r = self.rotation as usize;
        match (self.reflected, r) {
            (true, r) if r % 2 == 0 => ConjugacyClass::VertexReflection,
            (true, _) => ConjugacyClass::EdgeReflection,
            (false, 0) => ConjugacyClass::Identity,
            (false, 6) => ConjugacyClass::Tritone,
            (false, r) => ConjugacyClass::Rotation(r.min(12 - r) as u8),
        }
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.rotation)?;
        if self.reflected {
            write!(f, "R")?;
        }
        Ok(())
    }
}

impl FromStr for GroupElement {
    type Err = GroupError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GroupError::BadElement(s.to_string());
        let rest = s.trim().strip_prefix('T').ok_or_else(bad)?;
        let (digits, reflected) = match rest.strip_suffix('R') {
            Some(d) => (d, true),
            None => (rest, false),
        };
        let i: u8 = digits.parse().map_err(|_| bad())?;
        if i >= 12 {
            return Err(bad());
        }
        Ok(Self::new(i as i64, reflected))
    }
}

/// The nine conjugacy classes of D12.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConjugacyClass {
    Identity,
    /// `{T_k, T_{12−k}}` for k in 1..=5.
    Rotation(u8),
    Tritone,
    /// `T_i R` with i even: the mirror axis passes through two pitch classes.
    VertexReflection,
    /// `T_i R` with i odd.
    EdgeReflection,
}

impl ConjugacyClass {
    pub const ALL: [Self; 9] = [
        Self::Identity,
        Self::Rotation(1),
        Self::Rotation(2),
        Self::Rotation(3),
        Self::Rotation(4),
        Self::Rotation(5),
        Self::Tritone,
        Self::VertexReflection,
        Self::EdgeReflection,
    ];

    pub fn size(self) -> usize {
        match self {
            Self::Identity | Self::Tritone => 1,
            Self::Rotation(_) => 2,
            Self::VertexReflection | Self::EdgeReflection => 6,
        }
    }

    pub fn representative(self) -> GroupElement {
        match self {
            Self::Identity => GroupElement::IDENTITY,
            Self::Rotation(k) => GroupElement::transposition(k as i64),
            Self::Tritone => GroupElement::transposition(6),
            Self::VertexReflection => GroupElement::reflection(),
            Self::EdgeReflection => GroupElement::new(1, true),
        }
    }

    pub fn name(self) -> String {
        match self {
            Self::Identity => "E".into(),
            Self::Rotation(k) => format!("2T{k}"),
            Self::Tritone => "T6".into(),
            Self::VertexReflection => "6R_even".into(),
            Self::EdgeReflection => "6R_odd".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IrrepLabel {
    A1,
    A2,
    B1,
    B2,
    E1,
    E2,
    E3,
    E4,
    E5,
}

impl IrrepLabel {
    pub const ALL: [Self; 9] =
        [Self::A1, Self::A2, Self::B1, Self::B2, Self::E1, Self::E2, Self::E3, Self::E4, Self::E5];

    pub fn dim(self) -> usize {
        match self {
            Self::A1 | Self::A2 | Self::B1 | Self::B2 => 1,
            _ => 2,
        }
    }

    /// `k` for `E_k`.
    fn planar_order(self) -> Option<i64> {
        match self {
            Self::E1 => Some(1),
            Self::E2 => Some(2),
            Self::E3 => Some(3),
            Self::E4 => Some(4),
            Self::E5 => Some(5),
            _ => None,
        }
    }

    /// Character-table entry.
    pub fn character(self, class: ConjugacyClass) -> f64 {
        use ConjugacyClass as C;
        if let Some(k) = self.planar_order() {
            return match class {
                C::Identity => 2.0,
                C::Rotation(m) => 2.0 * (PI * (k * m as i64) as f64 / 6.0).cos(),
                C::Tritone => 2.0 * if k % 2 == 0 { 1.0 } else { -1.0 },
                C::VertexReflection | C::EdgeReflection => 0.0,
            };
        }
        let rotation_sign = |odd: bool| -> f64 {
            if odd {
                -1.0
            } else {
                1.0
            }
        };
        match (self, class) {
            (Self::A1, _) => 1.0,
            (Self::A2, C::VertexReflection | C::EdgeReflection) => -1.0,
            (Self::A2, _) => 1.0,
            (Self::B1 | Self::B2, C::Identity | C::Tritone) => 1.0,
            (Self::B1 | Self::B2, C::Rotation(m)) => rotation_sign(m % 2 == 1),
            (Self::B1, C::VertexReflection) => -1.0,
            (Self::B1, C::EdgeReflection) => 1.0,
            (Self::B2, C::VertexReflection) => 1.0,
            (Self::B2, C::EdgeReflection) => -1.0,
            _ => unreachable!(),
        }
    }

    pub fn character_of(self, g: GroupElement) -> f64 {
        self.character(g.conjugacy_class())
    }

    /// Explicit real orthogonal matrix `D^(a)(g)`.
    pub fn matrix(self, g: GroupElement) -> Tensor {
        let i = g.rotation() as i64;
        if let Some(k) = self.planar_order() {
            let theta = PI * (k * i) as f64 / 6.0;
            let (s, c) = theta.sin_cos();
            // rot(θ)·F with F = diag(1, −1) for reflected elements
            let f = if g.is_reflected() { -1.0 } else { 1.0 };
            return Tensor::from_parts(vec![2, 2], vec![c, -s * f, s, c * f]);
        }
        let odd = if i % 2 == 1 { -1.0 } else { 1.0 };
        let r = g.is_reflected();
        let v = match self {
            Self::A1 => 1.0,
            Self::A2 => {
                if r {
                    -1.0
                } else {
                    1.0
                }
            }
            Self::B1 => odd * if r { -1.0 } else { 1.0 },
            Self::B2 => odd,
            _ => unreachable!(),
        };
        Tensor::from_parts(vec![1, 1], vec![v])
    }
}

impl fmt::Display for IrrepLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for IrrepLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|l| l.to_string() == s).ok_or_else(|| format!("unknown irrep {s:?}"))
    }
}

/// `D^(a)(g)` for every element, indexed by [`GroupElement::index`].
#[derive(Clone, Debug)]
pub struct IrrepMatrices {
    pub label: IrrepLabel,
    matrices: Vec<Tensor>,
}

impl IrrepMatrices {
    pub fn get(&self, g: GroupElement) -> &Tensor {
        &self.matrices[g.index()]
    }
}

pub fn irrep_matrices(label: IrrepLabel) -> IrrepMatrices {
    IrrepMatrices { label, matrices: GroupElement::all().map(|g| label.matrix(g)).collect() }
}

/// Multiplicity of every irrep in the permutation representation, from the
/// character inner product `(1/|G|) Σ_g χ^(a)(g) tr D^perm(g)`.
pub fn decompose_perm_rep() -> BTreeMap<IrrepLabel, usize> {
    IrrepLabel::ALL
        .into_iter()
        .map(|label| {
            let inner: f64 = GroupElement::all()
                .map(|g| {
                    let trace: f64 = (0..PITCH_CLASSES).filter(|&k| g.act(k) == k).count() as f64;
                    label.character_of(g) * trace
                })
                .sum::<f64>()
                / ORDER as f64;
            let m = inner.round();
            debug_assert!((inner - m).abs() < 1e-9);
            (label, m as usize)
        })
        .collect()
}

/// Row-orthonormal intertwiner `U^(a)` (l_a × 12) with
/// `D^(a)(g)·U = U·D^perm(g)` for every g.
#[derive(Clone, Debug)]
pub struct ChangeOfBasis {
    pub label: IrrepLabel,
    /// l_a × 12
    pub u: Tensor,
    /// 12 × l_a
    pub u_t: Tensor,
}

impl ChangeOfBasis {
    pub fn dim(&self) -> usize {
        self.label.dim()
    }

    /// Largest `|D^(a)(g)U − U D^perm(g)|` over all g.
    pub fn intertwiner_residual(&self) -> f64 {
        GroupElement::all()
            .map(|g| {
                let lhs = self.label.matrix(g).matmul(&self.u);
                let rhs = self.u.matmul(&g.perm_matrix());
                lhs.max_abs_diff(&rhs)
            })
            .fold(0.0, f64::max)
    }

    pub fn orthonormality_residual(&self) -> f64 {
        self.u.matmul(&self.u_t).max_abs_diff(&Tensor::identity(self.dim()))
    }
}

/// Projector onto the isotypic component of `label`:
/// `P = (l_a/|G|) Σ_g χ^(a)(g) D^perm(g)`.
pub fn isotypic_projector(label: IrrepLabel) -> Tensor {
    let mut p = Tensor::zeros(&[PITCH_CLASSES, PITCH_CLASSES]);
    for g in GroupElement::all() {
        let chi = label.character_of(g);
        if chi != 0.0 {
            p.add_assign(&g.perm_matrix().scale(chi));
        }
    }
    p.scale(label.dim() as f64 / ORDER as f64)
}

fn build_change_of_basis(label: IrrepLabel) -> Result<ChangeOfBasis, GroupError> {
    if decompose_perm_rep()[&label] == 0 {
        return Err(GroupError::NoSuchChannel(label));
    }
    let p = isotypic_projector(label);
    // P e_0 is the first column of P; it is fixed by R and spans the first
    // irrep coordinate.
    let seed = p.column(0);
    let norm = seed.iter().map(|x| x * x).sum::<f64>().sqrt();
    let first: Vec<f64> = seed.iter().map(|x| x / norm).collect();
    let rows = if label.dim() == 1 {
        vec![first]
    } else {
        // Solve the first row of D(T_1)U = U D^perm(T_1) for the second row:
        // cosθ·u1 − sinθ·u2 = u1·D^perm(T_1).
        let d = label.matrix(GroupElement::transposition(1));
        let (cos, sin) = (d.at(0, 0), d.at(1, 0));
        let shifted =
            Tensor::from_parts(vec![1, 12], first.clone()).matmul(&GroupElement::transposition(1).perm_matrix());
        let second: Vec<f64> = first.iter().zip(shifted.data()).map(|(u1, s)| (cos * u1 - s) / sin).collect();
        vec![first, second]
    };
    let u = Tensor::from_rows(&rows).expect("rows share length 12");
    let u_t = u.t();
    Ok(ChangeOfBasis { label, u, u_t })
}

static CHANNELS: OnceLock<Vec<ChangeOfBasis>> = OnceLock::new();

/// Every irrep with nonzero multiplicity, with its change of basis, in
/// `IrrepLabel::ALL` order (A1, B2, E1..E5). Computed once.
pub fn channels() -> &'static [ChangeOfBasis] {
    CHANNELS.get_or_init(|| {
        let mult = decompose_perm_rep();
        IrrepLabel::ALL
            .into_iter()
            .filter(|l| mult[l] > 0)
            .map(|l| build_change_of_basis(l).expect("label has nonzero multiplicity"))
            .collect()
    })
}

pub fn change_of_basis(label: IrrepLabel) -> Result<&'static ChangeOfBasis, GroupError> {
    channels().iter().find(|c| c.label == label).ok_or(GroupError::NoSuchChannel(label))
}

/// All `U^(a)` stacked into a 12×12 matrix.
pub fn stacked_basis() -> Tensor {
    let rows: Vec<Vec<f64>> = channels().iter().flat_map(|c| (0..c.dim()).map(|r| c.u.row(r).to_vec())).collect();
    Tensor::from_rows(&rows).expect("uniform rows")
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    fn action_vector(g: GroupElement) -> Vec<usize> {
        (0..12).map(|k| g.act(k)).collect()
    }

    /// Oracle: compose as functions on ordinals, then look the result up.
    fn compose_by_action(g: GroupElement, h: GroupElement) -> GroupElement {
        let target: Vec<usize> = (0..12).map(|k| g.act(h.act(k))).collect();
        GroupElement::all().find(|e| action_vector(*e) == target).expect("closure")
    }

    #[test]
    fn twenty_four_distinct_elements() {
        let mut actions: Vec<Vec<usize>> = GroupElement::all().map(action_vector).collect();
        actions.sort();
        actions.dedup();
        assert_eq!(actions.len(), 24);
    }

    #[test]
    fn cayley_table_matches_action_oracle() {
        for g in GroupElement::all() {
            for h in GroupElement::all() {
                assert_eq!(g.compose(h), compose_by_action(g, h), "{g} ∘ {h}");
            }
        }
    }

    #[test]
    fn group_axioms_hold_exhaustively() {
        for a in GroupElement::all() {
            assert_eq!(a.compose(a.inverse()), GroupElement::IDENTITY);
            assert_eq!(a.inverse().compose(a), GroupElement::IDENTITY);
            assert_eq!(a.compose(GroupElement::IDENTITY), a);
            for b in GroupElement::all() {
                for c in GroupElement::all() {
                    assert_eq!(a.compose(b).compose(c), a.compose(b.compose(c)));
                }
            }
        }
    }

    #[test]
    fn compose_examples() {
        let t = GroupElement::transposition;
        assert_eq!(t(1).compose(t(11)), GroupElement::IDENTITY);
        let r = GroupElement::reflection();
        assert_eq!(r.compose(r), GroupElement::IDENTITY);
        assert_eq!(GroupElement::new(3, true).compose(GroupElement::new(5, true)), t(10));
    }

    #[test]
    fn worked_actions() {
        let t2 = GroupElement::transposition(2);
        assert_eq!(t2.act_ord(0).unwrap(), 2);
        assert_eq!(t2.act_set(&[0, 4, 7]).unwrap(), vec![2, 6, 9]);
        // T7∘R sends C major {C,E,G} to C minor {C,E♭,G}
        let t7r = GroupElement::new(7, true);
        assert_eq!(t7r.act(0), 7);
        assert_eq!(t7r.act(4), 3);
        assert_eq!(t7r.act(7), 0);
        assert_eq!(t7r.act_set(&[0, 4, 7]).unwrap(), vec![0, 3, 7]);
        for k in 0..12 {
            assert_eq!(GroupElement::IDENTITY.act_ord(k).unwrap(), k);
        }
        assert_eq!(t2.act_ord(12), Err(GroupError::OrdinalOutOfRange(12)));
    }

    #[test]
    fn perm_matrix_is_a_homomorphism() {
        assert_eq!(GroupElement::IDENTITY.perm_matrix(), Tensor::identity(12));
        let mut e11 = Tensor::zeros(&[12, 1]);
        e11.set(11, 0, 1.0);
        let img = GroupElement::transposition(1).perm_matrix().matmul(&e11);
        assert_eq!(img.at(0, 0), 1.0);
        for g in GroupElement::all() {
            for h in GroupElement::all() {
                let lhs = g.perm_matrix().matmul(&h.perm_matrix());
                assert_eq!(lhs, g.compose(h).perm_matrix());
            }
        }
    }

    #[test]
    fn permute_rows_matches_perm_matrix() {
        let m = Tensor::new(&[12, 3], (0..36).map(|x| x as f64).collect()).unwrap();
        for g in GroupElement::all() {
            assert_eq!(g.permute_rows(&m), g.perm_matrix().matmul(&m));
        }
    }

    #[test]
    fn parse_and_display_round_trip() {
        for g in GroupElement::all() {
            assert_eq!(g.to_string().parse::<GroupElement>().unwrap(), g);
        }
        assert!("T12".parse::<GroupElement>().is_err());
        assert!("R".parse::<GroupElement>().is_err());
        assert!("T-1".parse::<GroupElement>().is_err());
    }

    #[test]
    fn class_sizes_sum_to_order() {
        let total: usize = ConjugacyClass::ALL.iter().map(|c| c.size()).sum();
        assert_eq!(total, 24);
        for class in ConjugacyClass::ALL {
            let members = GroupElement::all().filter(|g| g.conjugacy_class() == class).count();
            assert_eq!(members, class.size());
            // closed under conjugation
            for g in GroupElement::all().filter(|g| g.conjugacy_class() == class) {
                for h in GroupElement::all() {
                    assert_eq!(h.compose(g).compose(h.inverse()).conjugacy_class(), class);
                }
            }
        }
    }

    #[test]
    fn character_orthogonality_relations() {
        let dims: usize = IrrepLabel::ALL.iter().map(|l| l.dim() * l.dim()).sum();
        assert_eq!(dims, 24);
        for a in IrrepLabel::ALL {
            for b in IrrepLabel::ALL {
                let inner: f64 = GroupElement::all().map(|g| a.character_of(g) * b.character_of(g)).sum::<f64>() / 24.0;
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((inner - expected).abs() < TOL, "<{a},{b}> = {inner}");
            }
        }
    }

    #[test]
    fn irrep_matrices_are_orthogonal_homomorphisms_with_table_traces() {
        for label in IrrepLabel::ALL {
            let reps = irrep_matrices(label);
            let l = label.dim();
            for g in GroupElement::all() {
                let d = reps.get(g);
                assert!(d.matmul(&d.t()).max_abs_diff(&Tensor::identity(l)) < TOL);
                let trace: f64 = (0..l).map(|i| d.at(i, i)).sum();
                assert!((trace - label.character_of(g)).abs() < TOL, "{label} at {g}");
                for h in GroupElement::all() {
                    let lhs = reps.get(g.compose(h));
                    assert!(lhs.max_abs_diff(&d.matmul(reps.get(h))) < TOL);
                }
            }
        }
        assert!(IrrepLabel::A1.matrix(GroupElement::new(5, true)).item() == 1.0);
        let quarter = IrrepLabel::E1.matrix(GroupElement::transposition(3));
        let expected = Tensor::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        assert!(quarter.max_abs_diff(&expected) < TOL);
    }

    #[test]
    fn permutation_representation_multiplicities() {
        let m = decompose_perm_rep();
        let expected = [
            (IrrepLabel::A1, 1),
            (IrrepLabel::A2, 0),
            (IrrepLabel::B1, 0),
            (IrrepLabel::B2, 1),
            (IrrepLabel::E1, 1),
            (IrrepLabel::E2, 1),
            (IrrepLabel::E3, 1),
            (IrrepLabel::E4, 1),
            (IrrepLabel::E5, 1),
        ];
        for (label, mult) in expected {
            assert_eq!(m[&label], mult, "{label}");
        }
        let dim: usize = m.iter().map(|(l, k)| l.dim() * k).sum();
        assert_eq!(dim, 12);
    }

    #[test]
    fn change_of_basis_invariants() {
        assert_eq!(channels().len(), 7);
        for c in channels() {
            assert!(c.intertwiner_residual() <= TOL, "{}", c.label);
            assert!(c.orthonormality_residual() <= TOL, "{}", c.label);
            let ones = Tensor::full(&[12, 1], 1.0);
            let image = c.u.matmul(&ones);
            if c.label == IrrepLabel::A1 {
                assert!((image.item() - 12f64.sqrt()).abs() < TOL);
            } else {
                assert!(image.max_abs() < TOL, "{}", c.label);
            }
        }
        let stacked = stacked_basis();
        assert!(stacked.matmul(&stacked.t()).max_abs_diff(&Tensor::identity(12)) <= TOL);
        assert!(stacked.t().matmul(&stacked).max_abs_diff(&Tensor::identity(12)) <= TOL);
    }

    #[test]
    fn trivial_and_alternating_bases() {
        let a1 = change_of_basis(IrrepLabel::A1).unwrap();
        for x in a1.u.data() {
            assert!((x - 1.0 / 12f64.sqrt()).abs() < TOL);
        }
        // oracle: project e_0 with the B2 character, then normalize
        let mut v = [0.0; 12];
        for g in GroupElement::all() {
            v[g.act(0)] += IrrepLabel::B2.character_of(g);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let b2 = change_of_basis(IrrepLabel::B2).unwrap();
        let sign = b2.u.at(0, 0).signum();
        for (k, x) in v.iter().enumerate() {
            assert!((b2.u.at(0, k) - sign * x / n).abs() < TOL);
            let alt = if k % 2 == 0 { 1.0 } else { -1.0 } / 12f64.sqrt();
            assert!((b2.u.at(0, k) - sign * alt).abs() < TOL);
        }
    }

    #[test]
    fn planar_bases_have_closed_form() {
        // U^(E_k) = (1/√6)[cos(πkj/6); sin(πkj/6)], fixed by the e_0 seed
        for (k, label) in
            [IrrepLabel::E1, IrrepLabel::E2, IrrepLabel::E3, IrrepLabel::E4, IrrepLabel::E5].into_iter().enumerate()
        {
            let c = change_of_basis(label).unwrap();
            for j in 0..12 {
                let theta = PI * ((k + 1) * j) as f64 / 6.0;
                assert!((c.u.at(0, j) - theta.cos() / 6f64.sqrt()).abs() < TOL);
                assert!((c.u.at(1, j) - theta.sin() / 6f64.sqrt()).abs() < TOL);
            }
        }
    }

    #[test]
    fn vanishing_channels_are_rejected() {
        assert_eq!(change_of_basis(IrrepLabel::A2).unwrap_err(), GroupError::NoSuchChannel(IrrepLabel::A2));
        assert!(build_change_of_basis(IrrepLabel::B1).is_err());
    }
}
