//! Basis LUT banks on disk.
//!
//! A bank is stored as a weight archive whose tensors are named `basis.0`
//! through `basis.{N-1}`, each rank 5 with dims `[3, C, D, D, D]` in the
//! 4D LUT index order. The identity is reconstructed on load, not stored.

use std::path::Path;

use super::weights_bin::{read_weights, weights_to_bytes};
use crate::error::{Error, Result};
use crate::lut::{BasisLutBank, Lut4D};
use crate::nn::{Tensor, WeightArchive};

pub fn bank_to_archive(bank: &BasisLutBank) -> WeightArchive {
    let mut archive = WeightArchive::new();
    let (d, c) = (bank.size(), bank.context_bins());
    for (i, basis) in bank.bases().iter().enumerate() {
        let tensor = Tensor::new(vec![3, c, d, d, d], basis.entries().to_vec())
            .expect("basis entries are validated at construction");
        archive
            .insert(format!("basis.{i}"), tensor)
            .expect("sequential basis names are unique");
    }
    archive
}

pub fn bank_from_archive(archive: &WeightArchive) -> Result<BasisLutBank> {
    let mut bases = Vec::new();
    let mut i = 0;
    while let Some(t) = archive.get(&format!("basis.{i}")) {
        if t.rank() != 5 || t.dims()[0] != 3 {
            return Err(Error::Format(format!(
                "basis.{i} must have dims [3, C, D, D, D], got {:?}",
                t.dims()
            )));
        }
        let (c, d) = (t.dims()[1], t.dims()[2]);
        if t.dims()[3] != d || t.dims()[4] != d {
            return Err(Error::Format(format!(
                "basis.{i} color dims must agree, got {:?}",
                t.dims()
            )));
        }
        bases.push(Lut4D::new(d, c, t.data().to_vec())?);
        i += 1;
    }
    if bases.is_empty() {
        return Err(Error::Format(
            "bank archive holds no `basis.N` tensors".into(),
        ));
    }
    BasisLutBank::new(bases)
}

pub fn write_bank(path: impl AsRef<Path>, bank: &BasisLutBank) -> Result<()> {
    std::fs::write(path, weights_to_bytes(&bank_to_archive(bank)))?;
    Ok(())
}

pub fn read_bank(path: impl AsRef<Path>) -> Result<BasisLutBank> {
    bank_from_archive(&read_weights(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::weights_bin::read_weights_bytes;

    #[test]
    fn roundtrip_preserves_bases() {
        let bank = BasisLutBank::seeded(3, 5, 2, 0.2, 65).unwrap();
        let bytes = weights_to_bytes(&bank_to_archive(&bank));
        let back = bank_from_archive(&read_weights_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.count(), 3);
        for (a, b) in bank.bases().iter().zip(back.bases()) {
            assert_eq!(a.entries(), b.entries());
        }
        assert_eq!(bank.identity().entries(), back.identity().entries());
    }

    #[test]
    fn empty_archive_is_not_a_bank() {
        let archive = WeightArchive::new();
        assert!(bank_from_archive(&archive).is_err());
    }
}
