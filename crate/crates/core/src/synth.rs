//! Small synthetic datasets in the `kg_final.txt` / `ratings_final.txt`
//! layout, with users who favor one genre, for smoke tests and demos.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub genres: usize,
    pub artists_per_genre: usize,
    pub interactions_per_user: usize,
    /// Probability that an interaction falls inside the user's genre.
    pub affinity: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 60,
            items: 120,
            genres: 4,
            artists_per_genre: 5,
            interactions_per_user: 8,
            affinity: 0.9,
            seed: 0,
        }
    }
}

pub struct SynthData {
    /// `head<TAB>relation<TAB>tail` lines.
    pub kg: String,
    /// `user<TAB>item<TAB>label` lines, each positive followed by one
    /// negative.
    pub ratings: String,
}

/// Items are entities `0..items`; genre and artist entities follow. Each
/// item has one genre, one artist of that genre and, as noise, one of three
/// release eras.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.genres == 0 || cfg.artists_per_genre == 0 || cfg.items < cfg.genres || cfg.users == 0 {
        return Err(Error::Config(format!("invalid synthetic dataset settings {cfg:?}")));
    }
    if cfg.interactions_per_user * 2 > cfg.items / cfg.genres {
        return Err(Error::Config("too many interactions per user for the genre size".into()));
    }
    let mut rng = seed::derived_rng(cfg.seed, &[seed::tag("synth")]);
    let genre_base = cfg.items;
    let artist_base = genre_base + cfg.genres;
    let era_base = artist_base + cfg.genres * cfg.artists_per_genre;
    let genre_of = |item: usize| item % cfg.genres;

    let mut kg = String::new();
    for item in 0..cfg.items {
        let g = genre_of(item);
        let a = g * cfg.artists_per_genre + rng.gen_range(0..cfg.artists_per_genre);
        let _ = writeln!(kg, "{item}\t0\t{}", genre_base + g);
        let _ = writeln!(kg, "{item}\t1\t{}", artist_base + a);
        let _ = writeln!(kg, "{item}\t2\t{}", era_base + rng.gen_range(0..3));
    }

    let mut ratings = String::new();
    for user in 0..cfg.users {
        let fav = rng.gen_range(0..cfg.genres);
        let mut liked = HashSet::new();
        while liked.len() < cfg.interactions_per_user {
            let item = if rng.gen_bool(cfg.affinity) {
                fav + cfg.genres * rng.gen_range(0..cfg.items.div_ceil(cfg.genres))
            } else {
                rng.gen_range(0..cfg.items)
            };
            if item < cfg.items {
                liked.insert(item);
            }
        }
        let mut liked: Vec<usize> = liked.into_iter().collect();
        liked.sort_unstable();
        let mut used = HashSet::new();
        for &item in &liked {
            let _ = writeln!(ratings, "{user}\t{item}\t1");
            let neg = loop {
                let cand = rng.gen_range(0..cfg.items);
                if !liked.contains(&cand) && used.insert(cand) {
                    break cand;
                }
            };
            let _ = writeln!(ratings, "{user}\t{neg}\t0");
        }
    }
    Ok(SynthData { kg, ratings })
}

/// Writes `kg_final.txt` and `ratings_final.txt` into `dir`.
pub fn write(cfg: &SynthConfig, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let data = generate(cfg)?;
    for (name, text) in [("kg_final.txt", &data.kg), ("ratings_final.txt", &data.ratings)] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.kg, b.kg);
        assert_eq!(a.ratings, b.ratings);
        let pos = a.ratings.lines().filter(|l| l.ends_with("\t1")).count();
        let neg = a.ratings.lines().filter(|l| l.ends_with("\t0")).count();
        assert_eq!(pos, cfg.users * cfg.interactions_per_user);
        assert_eq!(pos, neg);
        assert_eq!(a.kg.lines().count(), 3 * cfg.items);
    }
}
