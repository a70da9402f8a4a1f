//! Breadth-first search over single-character edits as an edit-distance
//! oracle. An optimal script can always delete first, substitute next and
//! insert last, so no intermediate string is longer than both endpoints and
//! the search may stay inside the set of short strings.

use std::collections::{HashMap, VecDeque};

pub fn all_strings(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut frontier = vec![String::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &c in alphabet {
                next.push(format!("{s}{c}"));
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn neighbours(s: &str, alphabet: &[char], max_len: usize) -> Vec<String> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    for i in 0..chars.len() {
        let mut d = chars.clone();
        d.remove(i);
        out.push(d.iter().collect());
        for &c in alphabet {
            if c != chars[i] {
                let mut r = chars.clone();
                r[i] = c;
                out.push(r.iter().collect());
            }
        }
    }
    if chars.len() < max_len {
        for i in 0..=chars.len() {
            for &c in alphabet {
                let mut ins = chars.clone();
                ins.insert(i, c);
                out.push(ins.iter().collect());
            }
        }
    }
    out
}

/// Distances from `source` to every string of length at most `max_len`.
pub fn bfs_distances(source: &str, alphabet: &[char], max_len: usize) -> HashMap<String, usize> {
    let mut dist = HashMap::new();
    dist.insert(source.to_string(), 0);
    let mut queue = VecDeque::from([source.to_string()]);
    while let Some(s) = queue.pop_front() {
        let d = dist[&s];
        for n in neighbours(&s, alphabet, max_len) {
            if !dist.contains_key(&n) {
                dist.insert(n.clone(), d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

/// Number of pairs checked and the first disagreement, if any.
pub fn exhaustive_check(
    distance: impl Fn(&str, &str) -> usize,
    alphabet: &[char],
    max_len: usize,
) -> (usize, Option<(String, String, usize, usize)>) {
    let strings = all_strings(alphabet, max_len);
    let mut checked = 0;
    for a in &strings {
        let oracle = bfs_distances(a, alphabet, max_len);
        for b in &strings {
            let (dp, bf) = (distance(a, b), oracle[b]);
            checked += 1;
            if dp != bf {
                return (checked, Some((a.clone(), b.clone(), dp, bf)));
            }
        }
    }
    (checked, None)
}
