//! Distributions and finite measures tabulated on a [`Lattice`].
//!
//! Probability that falls outside the lattice is never dropped: it is kept in
//! explicit left/right excess buckets so that tail diagnostics can tell real
//! tail mass from truncation bookkeeping.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::lattice::{DeltaWindow, Lattice};

/// FFT and clamping noise floor: negative cells above `-NEG_FLOOR` are set to 0.
pub const NEG_FLOOR: f64 = 1e-12;
/// Tolerance on `sum(mass) + excesses == 1`.
pub const NORM_TOL: f64 = 1e-9;

/// Probability on and around a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDistribution {
    lattice: Lattice,
    mass: Vec<f64>,
    left_excess: f64,
    right_excess: f64,
    ambiguous: f64,
}

/// Analytic mass outside the lattice supplied by a caller of [`GridDistribution::from_density`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TailHint {
    pub left: f64,
    pub right: f64,
}

impl TailHint {
    pub fn right(mass: f64) -> Self {
        Self { left: 0.0, right: mass }
    }

    pub fn total(&self) -> f64 {
        self.left + self.right
    }
}

pub(crate) fn clamp_cells(mass: &mut [f64]) -> Result<()> {
    for (k, m) in mass.iter_mut().enumerate() {
        if m.is_nan() {
            return Err(Error::InvalidArgument(format!("cell {k} has NaN mass")));
        }
        if *m < 0.0 {
            if *m >= -NEG_FLOOR {
                *m = 0.0;
            } else {
                return Err(Error::InvalidArgument(format!("cell {k} has negative mass {m}")));
            }
        }
    }
    Ok(())
}

fn clamp_scalar(name: &str, v: f64) -> Result<f64> {
    if v.is_nan() || v < -NEG_FLOOR {
        return Err(Error::InvalidArgument(format!("{name} must be nonnegative, got {v}")));
    }
    Ok(v.max(0.0))
}

/// 8-point Gauss-Legendre rule on `[a, b]`. The nodes are interior, so a
/// density with a jump at a cell edge is integrated from the correct side.
pub(crate) fn cell_integral(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
    const NODES: [(f64, f64); 4] = [
        (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
        (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
        (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
        (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
    ];
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for &(t, w) in &NODES {
        for x in [mid - half * t, mid + half * t] {
            let v = f(x);
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidDensity(format!("density value {v} at x = {x}")));
            }
            acc += w * v;
        }
    }
    Ok(acc * half)
}

impl GridDistribution {
    /// Validating constructor: tiny negative cells are clamped, and the
    /// total including excesses must be 1 within [`NORM_TOL`].
    pub fn new(lattice: Lattice, mass: Vec<f64>, left_excess: f64, right_excess: f64) -> Result<Self> {
        Self::assemble(lattice, mass, left_excess, right_excess, 0.0)
    }

    pub(crate) fn assemble(
        lattice: Lattice,
        mut mass: Vec<f64>,
        left_excess: f64,
        right_excess: f64,
        ambiguous: f64,
    ) -> Result<Self> {
        if mass.len() != lattice.len() {
            return Err(Error::InvalidArgument(format!(
                "mass vector has {} cells, lattice has {}",
                mass.len(),
                lattice.len()
            )));
        }
        clamp_cells(&mut mass)?;
        let left_excess = clamp_scalar("left excess", left_excess)?;
        let right_excess = clamp_scalar("right excess", right_excess)?;
        let total = mass.iter().sum::<f64>() + left_excess + right_excess;
        if !((total - 1.0).abs() <= NORM_TOL) {
            return Err(Error::InconsistentNormalization { total });
        }
        Ok(Self { lattice, mass, left_excess, right_excess, ambiguous: ambiguous.max(0.0) })
    }

    /// Point mass at `x` on the single cell `(x - span, x]`.
    pub fn point_mass(x: f64, span: f64) -> Result<Self> {
        let lattice = Lattice::new(x - span, span, 1)?;
        Self::new(lattice, vec![1.0], 0.0, 0.0)
    }

    /// The convolution identity compatible with zero-aligned lattices of this span.
    pub fn delta_zero(span: f64) -> Result<Self> {
        Self::point_mass(0.0, span)
    }

    /// Point mass at `x` placed on a given lattice (excess if `x` is off-grid).
    pub fn point_on(lattice: Lattice, x: f64) -> Result<Self> {
        let k = lattice.cell_of(x);
        let mut mass = vec![0.0; lattice.len()];
        let (mut l, mut r) = (0.0, 0.0);
        if k < 0 {
            l = 1.0;
        } else if k >= lattice.len() as i64 {
            r = 1.0;
        } else {
            mass[k as usize] = 1.0;
        }
        Self::new(lattice, mass, l, r)
    }

    /// Discretizes a density by integrating it over every cell (8-point
    /// Gauss-Legendre per cell). The result is renormalized to total 1 with
    /// the excesses scaled proportionally.
    pub fn from_density(f: &dyn Fn(f64) -> f64, lattice: Lattice, hint: TailHint) -> Result<Self> {
        if !(hint.left >= 0.0 && hint.right >= 0.0) {
            return Err(Error::InvalidArgument("tail mass hint must be nonnegative".into()));
        }
        let mut mass = Vec::with_capacity(lattice.len());
        for k in 0..lattice.len() as i64 {
            mass.push(cell_integral(f, lattice.edge(k), lattice.edge(k + 1))?);
        }
        let total = mass.iter().sum::<f64>() + hint.total();
        if !((total - 1.0).abs() <= 1e-3) {
            return Err(Error::InconsistentNormalization { total });
        }
        let s = 1.0 / total;
        mass.iter_mut().for_each(|m| *m *= s);
        Self::new(lattice, mass, hint.left * s, hint.right * s)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn left_excess(&self) -> f64 {
        self.left_excess
    }

    pub fn right_excess(&self) -> f64 {
        self.right_excess
    }

    /// Mass whose placement was ambiguous (left-excess paired with right-excess,
    /// or series tails of two-sided jumps). Quality counter only.
    pub fn ambiguous_mass(&self) -> f64 {
        self.ambiguous
    }

    pub fn grid_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn excess(&self) -> f64 {
        self.left_excess + self.right_excess
    }

    /// Mean of the on-grid atoms plus excesses placed at the grid edges.
    pub fn mean_with_edges(&self) -> f64 {
        let on: f64 = self.mass.iter().enumerate().map(|(k, m)| m * self.lattice.atom(k)).sum();
        on + self.left_excess * self.lattice.origin() + self.right_excess * self.lattice.end()
    }

    /// Mass at the cell whose atom is `x`, zero when `x` is not on the lattice.
    pub fn mass_at(&self, x: f64) -> f64 {
        let k = self.lattice.cell_of(x);
        if k >= 0 && (k as usize) < self.mass.len() {
            self.mass[k as usize]
        } else {
            0.0
        }
    }

    /// `(on-grid part, excess part)` of `F(x + Δ)`.
    pub fn interval_parts(&self, x: f64, w: DeltaWindow) -> Result<(f64, f64)> {
        window_parts(&self.lattice, &self.mass, self.left_excess, self.right_excess, x, w.width())
    }

    /// `F(x + Δ) = F(x, x + c]`. A window reaching past the right edge also
    /// receives the right excess; one starting below the left edge receives
    /// the left excess.
    pub fn interval_prob(&self, x: f64, w: DeltaWindow) -> Result<f64> {
        let (g, e) = self.interval_parts(x, w)?;
        Ok((g + e).min(1.0))
    }

    /// `P(X > x)`: cells strictly above `x` plus the right excess.
    pub fn tail_prob(&self, x: f64) -> Result<f64> {
        let k0 = self.lattice.boundary_index(x)?;
        let start = k0.clamp(0, self.lattice.len() as i64) as usize;
        let s: f64 = self.mass[start..].iter().sum();
        Ok((s + self.right_excess).min(1.0))
    }

    /// Re-tabulates onto a compatible lattice. Cells falling outside the
    /// target move to the excess on their side.
    pub fn restrict_to(&self, target: &Lattice) -> Result<Self> {
        let off = target.offset_of(&self.lattice)?;
        let mut mass = vec![0.0; target.len()];
        let (mut l, mut r) = (self.left_excess, self.right_excess);
        for (k, &m) in self.mass.iter().enumerate() {
            let j = k as i64 + off;
            if j < 0 {
                l += m;
            } else if j >= target.len() as i64 {
                r += m;
            } else {
                mass[j as usize] += m;
            }
        }
        Self::assemble(*target, mass, l, r, self.ambiguous)
    }

    /// Drops leading and trailing zero cells (keeps at least one cell).
    pub fn trimmed(&self) -> Self {
        let first = self.mass.iter().position(|&m| m > 0.0);
        let last = self.mass.iter().rposition(|&m| m > 0.0);
        match (first, last) {
            (Some(a), Some(b)) => {
                let lattice = self.lattice.slice(a as i64, b as i64 + 1).expect("nonempty slice");
                Self { lattice, mass: self.mass[a..=b].to_vec(), ..self.clone() }
            }
            _ => {
                let lattice = self.lattice.slice(0, 1).expect("nonempty slice");
                Self { lattice, mass: vec![0.0], ..self.clone() }
            }
        }
    }

    /// `F_+`: the law of `X` conditioned on `X > 0`. Cells whose atom is at
    /// or below 0 (in particular `(-span, 0]`) are excluded.
    pub fn positive_conditional(&self) -> Result<Self> {
        let first = self.first_positive_cell();
        let above: f64 = self.mass[first..].iter().sum::<f64>() + self.right_excess;
        if !(above > 0.0) {
            return Err(Error::DegenerateSupport("no mass above 0".into()));
        }
        let n = self.lattice.len();
        if first >= n {
            // Everything above 0 is in the right excess.
            let lattice = self.lattice.slice(n as i64 - 1, n as i64)?;
            return Self::assemble(lattice, vec![0.0], 0.0, 1.0, self.ambiguous);
        }
        let lattice = self.lattice.slice(first as i64, n as i64)?;
        let mass: Vec<f64> = self.mass[first..].iter().map(|m| m / above).collect();
        Self::assemble(lattice, mass, 0.0, self.right_excess / above, self.ambiguous)
    }

    /// `F^+`: mass at or below 0, including the left excess, collapsed onto
    /// the cell containing 0; the tail above 0 is unchanged.
    pub fn positive_truncated(&self) -> Result<Self> {
        let k0 = self.lattice.cell_of(0.0);
        let n = self.lattice.len() as i64;
        let lattice = if k0 >= n {
            self.lattice.slice(k0, k0 + 1)?
        } else {
            self.lattice.slice(k0, n)?
        };
        let mut mass = vec![0.0; lattice.len()];
        let mut collapsed = self.left_excess;
        let mut right = self.right_excess;
        for (k, &m) in self.mass.iter().enumerate() {
            let k = k as i64;
            if k <= k0 {
                collapsed += m;
            } else {
                mass[(k - k0) as usize] = m;
            }
        }
        if k0 >= n {
            // Grid entirely at or below 0: the right excess still lies above 0.
            right = self.right_excess;
        }
        mass[0] += collapsed;
        Self::assemble(lattice, mass, 0.0, right, self.ambiguous)
    }

    fn first_positive_cell(&self) -> usize {
        // Atom of cell k is edge(k+1); it is positive iff k > cell_of(0).
        let k0 = self.lattice.cell_of(0.0);
        (k0 + 1).clamp(0, self.lattice.len() as i64) as usize
    }

    /// Serializes as a header line followed by one `index,mass` row per nonzero cell.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write_grid_csv(&mut w, &self.lattice, &self.mass, self.left_excess, self.right_excess)
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let (lattice, mass, l, rr) = read_grid_csv(r)?;
        Self::new(lattice, mass, l, rr)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Cellwise convex combination on the hull of all lattices.
pub fn mix(weights: &[f64], dists: &[GridDistribution]) -> Result<GridDistribution> {
    if weights.len() != dists.len() || dists.is_empty() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} distributions",
            weights.len(),
            dists.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
    }
    let s: f64 = weights.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidWeights(format!("weights sum to {s}, not 1")));
    }
    let mut hull = *dists[0].lattice();
    for d in &dists[1..] {
        hull = hull.hull(d.lattice())?;
    }
    let mut mass = vec![0.0; hull.len()];
    let (mut l, mut r, mut amb) = (0.0, 0.0, 0.0);
    for (w, d) in weights.iter().zip(dists) {
        let off = hull.offset_of(d.lattice())? as usize;
        for (k, m) in d.mass().iter().enumerate() {
            mass[off + k] += w * m;
        }
        l += w * d.left_excess();
        r += w * d.right_excess();
        amb += w * d.ambiguous_mass();
    }
    // Weights are allowed to be off by up to 1e-6; fold the drift back in.
    let total = mass.iter().sum::<f64>() + l + r;
    if total > 0.0 && (total - 1.0).abs() > NORM_TOL * 0.5 {
        let c = 1.0 / total;
        mass.iter_mut().for_each(|m| *m *= c);
        l *= c;
        r *= c;
    }
    GridDistribution::assemble(hull, mass, l, r, amb)
}

/// A finite nonnegative measure on a lattice (Lévy measures, ladder measures).
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    lattice: Lattice,
    mass: Vec<f64>,
    total: f64,
    left_excess: f64,
    right_excess: f64,
    monotone_certified: bool,
}

impl GridMeasure {
    pub fn new(lattice: Lattice, mass: Vec<f64>, left_excess: f64, right_excess: f64) -> Result<Self> {
        let mut mass = mass;
        if mass.len() != lattice.len() {
            return Err(Error::InvalidArgument(format!(
                "mass vector has {} cells, lattice has {}",
                mass.len(),
                lattice.len()
            )));
        }
        clamp_cells(&mut mass)?;
        let left_excess = clamp_scalar("left excess", left_excess)?;
        let right_excess = clamp_scalar("right excess", right_excess)?;
        let total: f64 = mass.iter().sum();
        if !(total + left_excess + right_excess).is_finite() {
            return Err(Error::InvalidArgument("measure must have finite total mass".into()));
        }
        Ok(Self { lattice, mass, total, left_excess, right_excess, monotone_certified: false })
    }

    pub fn zero(lattice: Lattice) -> Self {
        Self::new(lattice, vec![0.0; lattice.len()], 0.0, 0.0).expect("zero measure")
    }

    /// Unit-free scaling of a distribution into a measure.
    pub fn from_distribution(d: &GridDistribution, scale: f64) -> Result<Self> {
        if !(scale >= 0.0) {
            return Err(Error::InvalidArgument("scale must be nonnegative".into()));
        }
        Self::new(
            *d.lattice(),
            d.mass().iter().map(|m| m * scale).collect(),
            d.left_excess() * scale,
            d.right_excess() * scale,
        )
    }

    pub(crate) fn with_certificate(mut self, certified: bool) -> Self {
        self.monotone_certified = certified;
        self
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Cached sum of the on-grid masses.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn left_excess(&self) -> f64 {
        self.left_excess
    }

    pub fn right_excess(&self) -> f64 {
        self.right_excess
    }

    /// On-grid mass plus both excesses.
    pub fn total_with_excess(&self) -> f64 {
        self.total + self.left_excess + self.right_excess
    }

    /// Set by the s-self-decomposable builder after a successful monotonicity check.
    pub fn monotone_certified(&self) -> bool {
        self.monotone_certified
    }

    pub fn interval_parts(&self, x: f64, w: DeltaWindow) -> Result<(f64, f64)> {
        window_parts(&self.lattice, &self.mass, self.left_excess, self.right_excess, x, w.width())
    }

    pub fn interval_mass(&self, x: f64, w: DeltaWindow) -> Result<f64> {
        let (g, e) = self.interval_parts(x, w)?;
        Ok(g + e)
    }

    /// Mass strictly above the aligned point `x`, right excess included.
    pub fn mass_above(&self, x: f64) -> Result<f64> {
        let k0 = self.lattice.boundary_index(x)?;
        let start = k0.clamp(0, self.lattice.len() as i64) as usize;
        Ok(self.mass[start..].iter().sum::<f64>() + self.right_excess)
    }

    /// Restriction to `(x, ∞)` normalized to a probability distribution.
    pub fn normalized_above(&self, x: f64) -> Result<GridDistribution> {
        let k0 = self.lattice.boundary_index(x)?;
        let above = self.mass_above(x)?;
        if !(above > 0.0) {
            return Err(Error::DegenerateMeasure(format!("no mass above {x}")));
        }
        let n = self.lattice.len() as i64;
        let start = k0.clamp(0, n - 1);
        let lattice = self.lattice.slice(start, n)?;
        let mut mass: Vec<f64> = self.mass[start as usize..].to_vec();
        if k0 >= n {
            mass[0] = 0.0;
        }
        mass.iter_mut().for_each(|m| *m /= above);
        GridDistribution::new(lattice, mass, 0.0, self.right_excess / above)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write_grid_csv(&mut w, &self.lattice, &self.mass, self.left_excess, self.right_excess)
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let (lattice, mass, l, rr) = read_grid_csv(r)?;
        Self::new(lattice, mass, l, rr)
    }
}

/// Anything with a window mass `(x, x + c]`; lets diagnostics treat
/// distributions and measures alike.
pub trait LocalMass {
    fn lattice(&self) -> &Lattice;
    fn window_parts(&self, x: f64, w: DeltaWindow) -> Result<(f64, f64)>;
}

impl LocalMass for GridDistribution {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn window_parts(&self, x: f64, w: DeltaWindow) -> Result<(f64, f64)> {
        self.interval_parts(x, w)
    }
}

impl LocalMass for GridMeasure {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn window_parts(&self, x: f64, w: DeltaWindow) -> Result<(f64, f64)> {
        self.interval_parts(x, w)
    }
}

fn window_parts(
    lattice: &Lattice,
    mass: &[f64],
    left: f64,
    right: f64,
    x: f64,
    c: f64,
) -> Result<(f64, f64)> {
    let k0 = lattice.boundary_index(x)?;
    let k1 = lattice.boundary_index(x + c)?;
    let n = lattice.len() as i64;
    let a = k0.clamp(0, n) as usize;
    let b = k1.clamp(0, n) as usize;
    let on: f64 = if b > a { mass[a..b].iter().sum() } else { 0.0 };
    let mut ex = 0.0;
    if k0 < 0 {
        ex += left;
    }
    if k1 > n {
        ex += right;
    }
    Ok((on, ex))
}

fn write_grid_csv<W: Write>(w: &mut W, lattice: &Lattice, mass: &[f64], l: f64, r: f64) -> Result<()> {
    writeln!(
        w,
        "# origin={:.16e} span={:.16e} len={} left_excess={:.16e} right_excess={:.16e}",
        lattice.origin(),
        lattice.span(),
        lattice.len(),
        l,
        r
    )?;
    for (k, m) in mass.iter().enumerate() {
        if *m != 0.0 {
            writeln!(w, "{k},{m:.16e}")?;
        }
    }
    Ok(())
}

fn read_grid_csv<R: BufRead>(r: R) -> Result<(Lattice, Vec<f64>, f64, f64)> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty grid file".into()))??;
    let body = header
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse("grid file must start with a '#' header".into()))?;
    let (mut origin, mut span, mut len, mut l, mut rr) = (None, None, None, None, None);
    for tok in body.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("malformed header token '{tok}'")))?;
        let num = || v.parse::<f64>().map_err(|e| Error::Parse(format!("header field {k}: {e}")));
        match k {
            "origin" => origin = Some(num()?),
            "span" => span = Some(num()?),
            "len" => len = Some(v.parse::<usize>().map_err(|e| Error::Parse(format!("header field len: {e}")))?),
            "left_excess" => l = Some(num()?),
            "right_excess" => rr = Some(num()?),
            other => return Err(Error::Parse(format!("unknown header field '{other}'"))),
        }
    }
    let missing = |n: &str| Error::Parse(format!("header is missing '{n}'"));
    let lattice = Lattice::new(
        origin.ok_or_else(|| missing("origin"))?,
        span.ok_or_else(|| missing("span"))?,
        len.ok_or_else(|| missing("len"))?,
    )?;
    let mut mass = vec![0.0; lattice.len()];
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, m) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("line {}: expected 'index,mass'", i + 2)))?;
        let k: usize = k.trim().parse().map_err(|e| Error::Parse(format!("line {}: {e}", i + 2)))?;
        let m: f64 = m.trim().parse().map_err(|e| Error::Parse(format!("line {}: {e}", i + 2)))?;
        if k >= mass.len() {
            return Err(Error::Parse(format!("line {}: index {k} outside lattice", i + 2)));
        }
        mass[k] = m;
    }
    Ok((lattice, mass, l.ok_or_else(|| missing("left_excess"))?, rr.ok_or_else(|| missing("right_excess"))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(c: f64) -> DeltaWindow {
        DeltaWindow::new(c).unwrap()
    }

    fn exponential_grid() -> GridDistribution {
        let lat = Lattice::new(0.0, 0.01, 4000).unwrap();
        let f = |x: f64| if x >= 0.0 { (-x).exp() } else { 0.0 };
        GridDistribution::from_density(&f, lat, TailHint::right((-40.0f64).exp())).unwrap()
    }

    #[test]
    fn exponential_cell_and_interval() {
        let e = exponential_grid();
        let k = e.lattice().cell_of(1.01) as usize;
        let expect = (-1.0f64).exp() - (-1.01f64).exp();
        assert!((e.mass()[k] - expect).abs() < 1e-12, "{}", e.mass()[k] - expect);
        let p = e.interval_prob(1.0, w(1.0)).unwrap();
        let expect = (-1.0f64).exp() - (-2.0f64).exp();
        assert!((p - expect).abs() < 1e-10);
        assert!((p - 0.232544).abs() < 1e-6);
    }

    #[test]
    fn zero_density_puts_everything_in_excess() {
        let lat = Lattice::new(0.0, 1.0, 10).unwrap();
        let d = GridDistribution::from_density(&|_| 0.0, lat, TailHint::right(1.0)).unwrap();
        assert_eq!(d.grid_mass(), 0.0);
        assert_eq!(d.right_excess(), 1.0);
    }

    #[test]
    fn pareto_density_interval_and_tail() {
        let lat = Lattice::new(0.0, 0.01, 10_000).unwrap();
        let f = |x: f64| if x > 1.0 { 2.0 * x.powi(-3) } else { 0.0 };
        let d = GridDistribution::from_density(&f, lat, TailHint::right(1e-4)).unwrap();
        let p = d.interval_prob(10.0, w(1.0)).unwrap();
        assert!((p - (1.0 / 100.0 - 1.0 / 121.0)).abs() < 1e-8);
        assert!((d.tail_prob(10.0).unwrap() - 0.01).abs() < 1e-8);
    }

    #[test]
    fn negative_density_and_bad_normalization() {
        let lat = Lattice::new(0.0, 1.0, 4).unwrap();
        assert!(matches!(
            GridDistribution::from_density(&|_| -1.0, lat, TailHint::default()),
            Err(Error::InvalidDensity(_))
        ));
        assert!(matches!(
            GridDistribution::from_density(&|_| 1.0, lat, TailHint::default()),
            Err(Error::InconsistentNormalization { .. })
        ));
    }

    #[test]
    fn point_mass_queries() {
        let d = GridDistribution::point_mass(0.0, 0.5).unwrap();
        assert_eq!(d.interval_prob(-0.5, w(1.0)).unwrap(), 1.0);
        assert_eq!(d.tail_prob(-1.0).unwrap(), 1.0);
        assert_eq!(d.tail_prob(0.0).unwrap(), 0.0);
        assert!(matches!(d.interval_prob(-0.3, w(1.0)), Err(Error::MisalignedWindow { .. })));
    }

    #[test]
    fn tiny_negative_cells_clamped_large_rejected() {
        let lat = Lattice::new(0.0, 1.0, 2).unwrap();
        let d = GridDistribution::new(lat, vec![1.0, -5e-13], 0.0, 0.0).unwrap();
        assert_eq!(d.mass()[1], 0.0);
        assert!(GridDistribution::new(lat, vec![1.0 + 1e-6, -1e-6], 0.0, 0.0).is_err());
        assert!(matches!(
            GridDistribution::new(lat, vec![0.5, 0.4], 0.0, 0.0),
            Err(Error::InconsistentNormalization { .. })
        ));
    }

    #[test]
    fn interval_additivity() {
        let e = exponential_grid();
        let a = e.interval_prob(0.5, w(0.7)).unwrap();
        let b = e.interval_prob(1.2, w(1.3)).unwrap();
        let ab = e.interval_prob(0.5, w(2.0)).unwrap();
        assert!((a + b - ab).abs() <= 1e-15);
    }

    #[test]
    fn excess_counted_when_window_leaves_grid() {
        let e = exponential_grid();
        let (g, x) = e.interval_parts(39.5, w(1.0)).unwrap();
        assert!(g > 0.0);
        assert!(x > 0.0);
        let (_, x) = e.interval_parts(10.0, w(1.0)).unwrap();
        assert_eq!(x, 0.0);
    }

    fn two_atoms() -> GridDistribution {
        // ½δ_{-1} + ½δ_{1} on span 1.
        let lat = Lattice::from_atoms(1.0, -1, 1).unwrap();
        GridDistribution::new(lat, vec![0.5, 0.0, 0.5], 0.0, 0.0).unwrap()
    }

    #[test]
    fn positive_conditional_of_symmetric_atoms() {
        let p = two_atoms().positive_conditional().unwrap();
        assert_eq!(p.mass_at(1.0), 1.0);
        assert_eq!(p.grid_mass(), 1.0);
    }

    #[test]
    fn positive_truncated_of_symmetric_atoms() {
        let p = two_atoms().positive_truncated().unwrap();
        assert_eq!(p.mass_at(0.0), 0.5);
        assert_eq!(p.mass_at(1.0), 0.5);
    }

    #[test]
    fn positive_ops_leave_positive_laws_alone() {
        let e = exponential_grid();
        let c = e.positive_conditional().unwrap();
        let t = e.positive_truncated().unwrap();
        for x in [0.5, 3.0, 10.0] {
            let a = e.tail_prob(x).unwrap();
            assert!((c.tail_prob(x).unwrap() - a).abs() < 1e-15);
            assert!((t.tail_prob(x).unwrap() - a).abs() < 1e-15);
        }
    }

    #[test]
    fn positive_conditional_rejects_nonpositive_support() {
        let d = GridDistribution::point_mass(0.0, 1.0).unwrap();
        assert!(matches!(d.positive_conditional(), Err(Error::DegenerateSupport(_))));
    }

    #[test]
    fn laplace_positive_parts() {
        let lat = Lattice::new(-30.0, 0.01, 6000).unwrap();
        let f = |x: f64| 0.5 * (-x.abs()).exp();
        let tail = (-30.0f64).exp() * 0.5;
        let d = GridDistribution::from_density(&f, lat, TailHint { left: tail, right: tail }).unwrap();
        let plus = d.positive_conditional().unwrap();
        for x in [0.5f64, 1.0, 2.0, 5.0] {
            let expect = (-x).exp() - (-(x + 1.0)).exp();
            assert!((plus.interval_prob(x, w(1.0)).unwrap() - expect).abs() < 1e-9);
        }
        let trunc = d.positive_truncated().unwrap();
        for x in [0.0, 0.5, 2.0, 7.0] {
            assert_eq!(trunc.tail_prob(x).unwrap(), d.tail_prob(x).unwrap());
        }
        assert!((trunc.mass_at(0.0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn mix_cases() {
        let e = exponential_grid();
        assert_eq!(mix(&[1.0], &[e.clone()]).unwrap(), e);
        let d0 = GridDistribution::point_mass(0.0, 1.0).unwrap();
        let d1 = GridDistribution::point_mass(1.0, 1.0).unwrap();
        let b = mix(&[0.5, 0.5], &[d0, d1]).unwrap();
        assert_eq!(b.mass(), &[0.5, 0.5]);
        assert!(matches!(mix(&[0.5, 0.4], &[e.clone(), e]), Err(Error::InvalidWeights(_))));
    }

    #[test]
    fn mix_of_poisson_terms_is_truncated_poisson() {
        let lam: f64 = 1.3;
        let pmf: Vec<f64> = (0..10)
            .map(|k| (-lam).exp() * lam.powi(k) / (1..=k).map(|i| i as f64).product::<f64>())
            .collect();
        let s: f64 = pmf.iter().sum();
        let weights: Vec<f64> = pmf.iter().map(|p| p / s).collect();
        let dists: Vec<_> = (0..10).map(|k| GridDistribution::point_mass(k as f64, 1.0).unwrap()).collect();
        let m = mix(&weights, &dists).unwrap();
        for k in 0..10 {
            assert!((m.mass_at(k as f64) - pmf[k] / s).abs() < 1e-15);
        }
    }

    #[test]
    fn csv_round_trip() {
        let e = exponential_grid();
        let s = e.to_csv_string();
        assert!(s.starts_with("# origin="));
        let back = GridDistribution::read_csv(s.as_bytes()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn measure_normalized_above() {
        let lat = Lattice::new(0.0, 0.5, 8).unwrap();
        let mut m = vec![0.0; 8];
        m[3] = 0.7; // atom at 2
        let nu = GridMeasure::new(lat, m, 0.0, 0.0).unwrap();
        let g = nu.normalized_above(1.0).unwrap();
        assert_eq!(g.mass_at(2.0), 1.0);
        assert!(matches!(nu.normalized_above(3.0), Err(Error::DegenerateMeasure(_))));
    }
}
