//! Fixed task lexicon: (category, task text) -> target region name.
//!
//! Stands in for language-model task grounding behind a plain lookup table,
//! and doubles as the external seam where a learned resolver could be
//! substituted: everything downstream consumes only the resolved region.

use crate::error::{Error, Result};

const LEXICON: &[(&str, &str, &str)] = &[
    ("mug", "pick up by handle", "handle"),
    ("mug", "pour water", "handle"),
    ("mug", "drink from it", "handle"),
    ("mug", "hand it over", "body"),
    ("hammer", "drive a nail", "handle"),
    ("hammer", "pick up by handle", "handle"),
    ("hammer", "hand it over", "head"),
    ("bottle", "pour water", "body"),
    ("bottle", "pick it up", "body"),
    ("bottle", "open the cap", "neck"),
    ("pan", "fry an egg", "handle"),
    ("pan", "pick up by handle", "handle"),
    ("pan", "hand it over", "body"),
    ("knife", "cut vegetables", "handle"),
    ("knife", "pick up by handle", "handle"),
    ("knife", "hand it over", "blade"),
    ("teapot", "pour tea", "handle"),
    ("teapot", "pick up by handle", "handle"),
    ("teapot", "inspect the spout", "spout"),
];

/// Region implied by a task for a category.
pub fn lookup(category: &str, task_text: &str) -> Result<&'static str> {
    LEXICON
        .iter()
        .find(|(c, t, _)| *c == category && *t == task_text)
        .map(|(_, _, r)| *r)
        .ok_or_else(|| Error::UnknownTask(task_text.to_string(), category.to_string()))
}

/// All (task, region) entries for a category.
pub fn tasks_for(category: &str) -> Vec<(&'static str, &'static str)> {
    LEXICON
        .iter()
        .filter(|(c, _, _)| *c == category)
        .map(|(_, t, r)| (*t, *r))
        .collect()
}
