//! Spatial discretization: window partitioning, preference-kernel
//! normalization and per-cell flattening, and the augmented empirical
//! measure that redistributes relay targets inside partition cells.

use crate::error::{Error, Result};
use crate::measure::{MarkedPointSet, Partition, Window};

/// Partition of the window into cubes of side `delta`, clipped at the
/// boundary.
pub fn partition_window(window: &Window, delta: f64) -> Result<Partition> {
    Partition::from_cubes(window.clone(), delta)
}

/// Preference values on a transmitter-cell x relay-cell grid, midpoint
/// evaluated, with the row normalizers cached after normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    x_part: Partition,
    y_part: Partition,
    values: Vec<f64>,
    row_normalizer: Option<Vec<f64>>,
}

impl KernelTable {
    pub fn from_fn(
        x_part: &Partition,
        y_part: &Partition,
        kernel: impl Fn(&[f64], &[f64]) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(x_part.len() * y_part.len());
        for xc in x_part.cells() {
            let xm = xc.centroid();
            for yc in y_part.cells() {
                let v = kernel(&xm, &yc.centroid());
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::domain("kernel values must be nonnegative and finite"));
                }
                values.push(v);
            }
        }
        Ok(KernelTable {
            x_part: x_part.clone(),
            y_part: y_part.clone(),
            values,
            row_normalizer: None,
        })
    }

    pub fn constant(x_part: &Partition, y_part: &Partition, value: f64) -> Result<Self> {
        KernelTable::from_fn(x_part, y_part, |_, _| value)
    }

    pub fn x_partition(&self) -> &Partition {
        &self.x_part
    }

    pub fn y_partition(&self) -> &Partition {
        &self.y_part
    }

    pub fn nx(&self) -> usize {
        self.x_part.len()
    }

    pub fn ny(&self) -> usize {
        self.y_part.len()
    }

    #[inline]
    pub fn value(&self, xi: usize, yi: usize) -> f64 {
        self.values[xi * self.y_part.len() + yi]
    }

    /// Cached `integral of kappa(x, z) nu_R(dz)` per row, present after
    /// normalization.
    pub fn row_normalizers(&self) -> Option<&[f64]> {
        self.row_normalizer.as_deref()
    }

    pub fn sup_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Row integral against per-cell masses on the relay axis.
    pub fn row_integral(&self, xi: usize, y_mass: &[f64]) -> f64 {
        (0..self.ny()).map(|yi| self.value(xi, yi) * y_mass[yi]).sum()
    }
}

/// Normalized kernel `kappa(y | x) = kappa(x, y) / integral kappa(x, z) nu_R(dz)`,
/// a density w.r.t. `nu_R`: every row integrates to one against `nu_R`.
pub fn normalize_kernel(kernel: &KernelTable, nu_r: &[f64]) -> Result<KernelTable> {
    if nu_r.len() != kernel.ny() {
        return Err(Error::mismatch(format!(
            "relay mass has {} entries for {} relay cells",
            nu_r.len(),
            kernel.ny()
        )));
    }
    let mut values = Vec::with_capacity(kernel.values.len());
    let mut normalizers = Vec::with_capacity(kernel.nx());
    for xi in 0..kernel.nx() {
        let norm = kernel.row_integral(xi, nu_r);
        if !(norm > 0.0) {
            return Err(Error::assumption(format!(
                "transmitter cell {xi} cannot reach any relay (zero row normalizer)"
            )));
        }
        normalizers.push(norm);
        for yi in 0..kernel.ny() {
            values.push(kernel.value(xi, yi) / norm);
        }
    }
    Ok(KernelTable {
        x_part: kernel.x_part.clone(),
        y_part: kernel.y_part.clone(),
        values,
        row_normalizer: Some(normalizers),
    })
}

/// Maps every relay cell of the kernel grid to the coarse partition cell
/// containing its centroid; errors when a centroid escapes the partition.
pub fn group_relay_cells(kernel: &KernelTable, partition: &Partition) -> Result<Vec<usize>> {
    kernel
        .y_partition()
        .cells()
        .iter()
        .map(|c| {
            partition
                .locate(&c.centroid())
                .ok_or_else(|| Error::mismatch("partition does not cover the relay grid"))
        })
        .collect()
}

/// Flattened kernel: constant on each partition cell, with value
/// `kappa_{nu_R}(W_i | x) / nu_R'(W_i)`. Cell-choice probabilities are
/// preserved exactly: the integral of the flat kernel over `W_i` against
/// `nu_R'` equals the normalized kernel's mass of `W_i`.
pub fn flatten_kernel(
    normalized: &KernelTable,
    partition: &Partition,
    nu_r: &[f64],
    nu_r_prime: &[f64],
) -> Result<KernelTable> {
    if normalized.row_normalizer.is_none() {
        return Err(Error::domain("flatten_kernel expects a normalized kernel"));
    }
    if nu_r.len() != normalized.ny() || nu_r_prime.len() != partition.len() {
        return Err(Error::mismatch("relay masses do not match the grids"));
    }
    let groups = group_relay_cells(normalized, partition)?;
    let k = partition.len();
    let mut values = Vec::with_capacity(normalized.values.len());
    for xi in 0..normalized.nx() {
        // probability of choosing each coarse cell
        let mut cell_prob = vec![0.0; k];
        for yi in 0..normalized.ny() {
            cell_prob[groups[yi]] += normalized.value(xi, yi) * nu_r[yi];
        }
        for (i, &p) in cell_prob.iter().enumerate() {
            if p > 1e-15 && nu_r_prime[i] <= 0.0 {
                return Err(Error::assumption(format!(
                    "relay cell {i} is empty but carries target probability {p:.3e}"
                )));
            }
        }
        for yi in 0..normalized.ny() {
            let i = groups[yi];
            let v = if nu_r_prime[i] > 0.0 {
                cell_prob[i] / nu_r_prime[i]
            } else {
                0.0
            };
            values.push(v);
        }
    }
    Ok(KernelTable {
        x_part: normalized.x_part.clone(),
        y_part: normalized.y_part.clone(),
        values,
        row_normalizer: normalized.row_normalizer.clone(),
    })
}

/// Per-coarse-cell choice probabilities of one transmitter cell under a
/// normalized kernel.
pub fn cell_choice_probabilities(
    normalized: &KernelTable,
    partition: &Partition,
    nu_r: &[f64],
    xi: usize,
) -> Result<Vec<f64>> {
    let groups = group_relay_cells(normalized, partition)?;
    let mut probs = vec![0.0; partition.len()];
    for yi in 0..normalized.ny() {
        probs[groups[yi]] += normalized.value(xi, yi) * nu_r[yi];
    }
    Ok(probs)
}

/// Exact L1 distance between two kernel tables against the product base
/// measure given by per-cell masses.
pub fn flattening_error(
    a: &KernelTable,
    b: &KernelTable,
    x_mass: &[f64],
    y_mass: &[f64],
) -> Result<f64> {
    if a.nx() != b.nx() || a.ny() != b.ny() {
        return Err(Error::mismatch("kernel tables live on different grids"));
    }
    if x_mass.len() != a.nx() || y_mass.len() != a.ny() {
        return Err(Error::mismatch("base masses do not match the kernel grid"));
    }
    let mut acc = 0.0;
    for xi in 0..a.nx() {
        for yi in 0..a.ny() {
            acc += (a.value(xi, yi) - b.value(xi, yi)).abs() * x_mass[xi] * y_mass[yi];
        }
    }
    Ok(acc)
}

/// Augmented empirical measure: tags every atom of the per-cell
/// configurations with its relay cell. Within a cell the relay coordinate is
/// distributed proportionally to the relay measure restricted to that cell,
/// which the cell tag represents exactly; per-cell masses are preserved.
pub fn augment_empirical(
    per_cell: &[MarkedPointSet],
    nu_r: &[f64],
) -> Result<MarkedPointSet> {
    if per_cell.len() != nu_r.len() {
        return Err(Error::mismatch(format!(
            "{} point sets for {} relay cells",
            per_cell.len(),
            nu_r.len()
        )));
    }
    if per_cell.is_empty() {
        return Err(Error::domain("at least one cell required"));
    }
    let weight = per_cell[0].weight();
    let t_f = per_cell[0].t_f();
    let mut atoms = Vec::new();
    for (i, set) in per_cell.iter().enumerate() {
        if (set.weight() - weight).abs() > 1e-15 || (set.t_f() - t_f).abs() > 1e-12 {
            return Err(Error::mismatch("per-cell point sets disagree on weight or horizon"));
        }
        for a in set.atoms() {
            let mut tagged = a.clone();
            tagged.target_cell = Some(i);
            atoms.push(tagged);
        }
    }
    MarkedPointSet::new(atoms, weight, t_f)
}
