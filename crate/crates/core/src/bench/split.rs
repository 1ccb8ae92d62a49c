use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Per-class shuffle-and-cut. Returns ascending `(train, test)` row indices.
pub fn stratified_split(labels: &[u8], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Split(format!("train fraction {fraction} outside (0, 1)")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::Split(format!("class {class} has {} rows, need at least 2", members.len())));
        }
        members.shuffle(&mut rng::substream(seed, "split", class as u64));
        let cut = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        train.extend_from_slice(&members[..cut]);
        test.extend_from_slice(&members[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportions_and_partition() {
        let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let (tr, te) = stratified_split(&labels, 0.8, 1).unwrap();
        assert_eq!(tr.iter().filter(|&&i| labels[i] == 0).count(), 8);
        assert_eq!(te.iter().filter(|&&i| labels[i] == 1).count(), 2);
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn seeds_matter() {
        let labels: Vec<u8> = (0..200).map(|i| (i % 2) as u8).collect();
        assert_eq!(stratified_split(&labels, 0.8, 3).unwrap(), stratified_split(&labels, 0.8, 3).unwrap());
        assert_ne!(stratified_split(&labels, 0.8, 3).unwrap(), stratified_split(&labels, 0.8, 4).unwrap());
    }

    #[test]
    fn tiny_class() {
        assert!(matches!(stratified_split(&[0, 0, 1], 0.8, 0), Err(Error::Split(_))));
        assert!(matches!(stratified_split(&[0, 0, 1, 1], 1.0, 0), Err(Error::Split(_))));
    }
}
