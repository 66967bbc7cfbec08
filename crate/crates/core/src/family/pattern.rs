//! Family orderings and patterns.
//!
//! Positions are 0-based in the API and 1-based in every printed form. A
//! family ordering is stored as a forest: `younger[v]` is the tree-parent of
//! `v`, i.e. the nearest vertex that `v` is an ancestor of. Roots are the
//! youngest members. "`i` is older than `j`" is the strict ancestor relation
//! `i <_F j`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PatternError {
    #[error("position {pos} out of range for a pattern with {len} positions")]
    OutOfRange { pos: usize, len: usize },
    #[error("family ordering has a cycle through position {0}")]
    Cyclic(usize),
    #[error("address map must be defined exactly on comparable pairs: {0}")]
    Addresses(String),
    #[error("malformed pattern encoding `{0}`")]
    Encoding(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FamilyOrdering {
    younger: Vec<Option<usize>>,
}

impl FamilyOrdering {
    pub fn new(younger: Vec<Option<usize>>) -> Result<Self, PatternError> {
        let n = younger.len();
        for (v, y) in younger.iter().enumerate() {
            if let Some(y) = *y {
                if y >= n {
                    return Err(PatternError::OutOfRange { pos: y, len: n });
                }
            }
            let mut cur = younger[v];
            let mut steps = 0;
            while let Some(c) = cur {
                if c == v || steps > n {
                    return Err(PatternError::Cyclic(v));
                }
                cur = younger[c];
                steps += 1;
            }
        }
        Ok(FamilyOrdering { younger })
    }

    /// Ordering with `k` pairwise incomparable vertices.
    pub fn discrete(k: usize) -> Self {
        FamilyOrdering { younger: vec![None; k] }
    }

    pub fn len(&self) -> usize {
        self.younger.len()
    }

    pub fn is_empty(&self) -> bool {
        self.younger.is_empty()
    }

    pub fn younger_link(&self, v: usize) -> Option<usize> {
        self.younger[v]
    }

    pub fn links(&self) -> &[Option<usize>] {
        &self.younger
    }

    /// Strict: `older <_F younger`.
    pub fn is_older(&self, older: usize, younger: usize) -> bool {
        let mut cur = self.younger[older];
        while let Some(c) = cur {
            if c == younger {
                return true;
            }
            cur = self.younger[c];
        }
        false
    }

    /// Reflexive version of [`is_older`](Self::is_older).
    pub fn is_older_or_eq(&self, a: usize, b: usize) -> bool {
        a == b || self.is_older(a, b)
    }

    pub fn comparable(&self, a: usize, b: usize) -> bool {
        self.is_older(a, b) || self.is_older(b, a)
    }

    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&v| self.younger[v].is_none())
    }

    /// True if the forest is a single tree rooted at position 1.
    pub fn is_tree_rooted_at_first(&self) -> bool {
        self.roots().eq(std::iter::once(0))
    }

    /// All pairs `(older, younger)` with `older <_F younger`, sorted.
    pub fn comparable_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for o in 0..self.len() {
            let mut cur = self.younger[o];
            while let Some(y) = cur {
                out.push((o, y));
                cur = self.younger[y];
            }
        }
        out.sort_unstable();
        out
    }

    /// Positions that are not older than or equal to any of `positions`.
    pub fn py_set(&self, positions: &BTreeSet<usize>) -> Result<BTreeSet<usize>, PatternError> {
        for &p in positions {
            if p >= self.len() {
                return Err(PatternError::OutOfRange { pos: p, len: self.len() });
            }
        }
        Ok((0..self.len()).filter(|&j| positions.iter().all(|&i| !self.is_older_or_eq(j, i))).collect())
    }
}

/// A family ordering with the address map: `address(older, younger)` is the
/// position, in the parenthood atom of the younger member, at which the older
/// member appears.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FamilyPattern {
    ordering: FamilyOrdering,
    addresses: BTreeMap<(usize, usize), usize>,
}

impl FamilyPattern {
    pub fn new(ordering: FamilyOrdering, addresses: BTreeMap<(usize, usize), usize>) -> Result<Self, PatternError> {
        let pairs = ordering.comparable_pairs();
        if pairs.len() != addresses.len() || pairs.iter().any(|p| !addresses.contains_key(p)) {
            return Err(PatternError::Addresses(format!(
                "expected pairs {:?}, got {:?}",
                pairs,
                addresses.keys().collect::<Vec<_>>()
            )));
        }
        Ok(FamilyPattern { ordering, addresses })
    }

    pub fn discrete(k: usize) -> Self {
        FamilyPattern { ordering: FamilyOrdering::discrete(k), addresses: BTreeMap::new() }
    }

    pub fn ordering(&self) -> &FamilyOrdering {
        &self.ordering
    }

    pub fn addresses(&self) -> &BTreeMap<(usize, usize), usize> {
        &self.addresses
    }

    pub fn len(&self) -> usize {
        self.ordering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordering.is_empty()
    }

    pub fn is_older(&self, older: usize, younger: usize) -> bool {
        self.ordering.is_older(older, younger)
    }

    pub fn address(&self, older: usize, younger: usize) -> Option<usize> {
        self.addresses.get(&(older, younger)).copied()
    }

    /// Largest address value plus one (0 if there are no addresses).
    pub fn max_address(&self) -> usize {
        self.addresses.values().map(|&v| v + 1).max().unwrap_or(0)
    }

    /// Pattern of the head of a rule `A ∧ B → ∃z S(z, args(A), args(B))`.
    ///
    /// Vertex 0 is the newborn; every other vertex is older than it and is
    /// addressed by its own position. Inside each block the ordering and the
    /// addresses of the premise are kept, shifted past the preceding positions.
    pub fn child(first: Option<&FamilyPattern>, second: Option<&FamilyPattern>) -> FamilyPattern {
        let blocks: Vec<&FamilyPattern> = first.into_iter().chain(second).collect();
        let mut younger = vec![None];
        let mut addresses = BTreeMap::new();
        let mut offset = 1;
        for b in &blocks {
            for v in 0..b.len() {
                younger.push(Some(b.ordering.younger[v].map_or(0, |y| y + offset)));
                addresses.insert((v + offset, 0), v + offset);
            }
            for (&(o, y), &a) in &b.addresses {
                addresses.insert((o + offset, y + offset), a);
            }
            offset += b.len();
        }
        FamilyPattern { ordering: FamilyOrdering { younger }, addresses }
    }

    /// Pattern induced on the positions `map` (head position `j` holds the
    /// body position `map[j]`, all distinct).
    pub fn project(&self, map: &[usize]) -> FamilyPattern {
        let inv: BTreeMap<usize, usize> = map.iter().enumerate().map(|(j, &i)| (i, j)).collect();
        let younger = map
            .iter()
            .map(|&i| {
                let mut cur = self.ordering.younger[i];
                while let Some(c) = cur {
                    if let Some(&j) = inv.get(&c) {
                        return Some(j);
                    }
                    cur = self.ordering.younger[c];
                }
                None
            })
            .collect();
        let mut addresses = BTreeMap::new();
        for (j, &i) in map.iter().enumerate() {
            for (jp, &ip) in map.iter().enumerate() {
                if let Some(a) = self.address(i, ip) {
                    addresses.insert((j, jp), a);
                }
            }
        }
        FamilyPattern { ordering: FamilyOrdering { younger }, addresses }
    }

    /// Canonical text form: younger links (1-based, `0` for roots) joined by
    /// `_`, then `:older~younger~address` for every address, in sorted order.
    pub fn encode(&self) -> String {
        let mut s = self
            .ordering
            .younger
            .iter()
            .map(|y| y.map_or(0, |v| v + 1).to_string())
            .collect::<Vec<_>>()
            .join("_");
        for (&(o, y), &a) in &self.addresses {
            s.push_str(&format!(":{}~{}~{}", o + 1, y + 1, a + 1));
        }
        s
    }

    pub fn decode(text: &str) -> Result<FamilyPattern, PatternError> {
        let bad = || PatternError::Encoding(text.to_string());
        let mut parts = text.split(':');
        let links = parts.next().unwrap_or("");
        let younger: Vec<Option<usize>> = if links.is_empty() {
            Vec::new()
        } else {
            links
                .split('_')
                .map(|t| t.parse::<usize>().map(|v| v.checked_sub(1)).map_err(|_| bad()))
                .collect::<Result<_, _>>()?
        };
        let ordering = FamilyOrdering::new(younger).map_err(|_| bad())?;
        let mut addresses = BTreeMap::new();
        for part in parts {
            let nums: Vec<usize> = part
                .split('~')
                .map(|t| t.parse::<usize>().ok().filter(|&v| v > 0).map(|v| v - 1).ok_or_else(bad))
                .collect::<Result<_, _>>()?;
            let [o, y, a] = nums[..] else { return Err(bad()) };
            if addresses.insert((o, y), a).is_some() {
                return Err(bad());
            }
        }
        let p = FamilyPattern::new(ordering, addresses).map_err(|_| bad())?;
        if p.encode() != text {
            return Err(bad());
        }
        Ok(p)
    }
}

impl fmt::Display for FamilyPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}
