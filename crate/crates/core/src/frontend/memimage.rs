use std::collections::BTreeMap;
use std::fmt;

use super::FrontendError;
use crate::ir::Program;

/// Contents of every declared array, keyed by name.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MemoryImage {
    pub arrays: BTreeMap<String, Vec<i32>>,
}

impl MemoryImage {
    /// All arrays of `program`, zero-filled.
    pub fn zeroed(program: &Program) -> Self {
        MemoryImage {
            arrays: program
                .memories
                .iter()
                .map(|m| (m.name.clone(), vec![0; m.len]))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[i32]> {
        self.arrays.get(name).map(|v| v.as_slice())
    }

    pub fn set(&mut self, name: &str, data: Vec<i32>) {
        self.arrays.insert(name.to_string(), data);
    }

    /// Checks that names and lengths match the program's declarations.
    pub fn check(&self, program: &Program) -> Result<(), FrontendError> {
        for m in &program.memories {
            match self.arrays.get(&m.name) {
                None => {
                    return Err(FrontendError::Memory(format!(
                        "array `{}` missing from image",
                        m.name
                    )))
                }
                Some(v) if v.len() != m.len => {
                    return Err(FrontendError::Memory(format!(
                        "array `{}` has {} elements, declared {}",
                        m.name,
                        v.len(),
                        m.len
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = self.arrays.keys().find(|k| program.array_id(k).is_none()) {
            return Err(FrontendError::Memory(format!(
                "array `{extra}` is not declared"
            )));
        }
        Ok(())
    }

    /// Arrays in declaration order.
    pub fn to_vecs(&self, program: &Program) -> Vec<Vec<i32>> {
        program
            .memories
            .iter()
            .map(|m| {
                self.arrays
                    .get(&m.name)
                    .cloned()
                    .unwrap_or_else(|| vec![0; m.len])
            })
            .collect()
    }

    pub fn from_vecs(program: &Program, data: Vec<Vec<i32>>) -> Self {
        MemoryImage {
            arrays: program
                .memories
                .iter()
                .map(|m| m.name.clone())
                .zip(data)
                .collect(),
        }
    }

    /// Parses `NAME: v0,v1,...` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, FrontendError> {
        let mut arrays = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| FrontendError::Memory(format!("line {}: {msg}", i + 1));
            let (name, values) = line
                .split_once(':')
                .ok_or_else(|| bad("expected `NAME: values`".into()))?;
            let name = name.trim();
            let values = values.trim();
            let data = if values.is_empty() {
                Vec::new()
            } else {
                values
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<i32>()
                            .map_err(|_| bad(format!("bad value `{}`", v.trim())))
                    })
                    .collect::<Result<Vec<_>, _>>()?
            };
            if arrays.insert(name.to_string(), data).is_some() {
                return Err(bad(format!("array `{name}` listed twice")));
            }
        }
        Ok(MemoryImage { arrays })
    }

    /// First differing (array, index, expected, actual) against `other`.
    pub fn first_difference(&self, other: &MemoryImage) -> Option<(String, usize, i32, i32)> {
        for (name, a) in &self.arrays {
            let b = other.arrays.get(name)?;
            if let Some(i) = (0..a.len().min(b.len())).find(|&i| a[i] != b[i]) {
                return Some((name.clone(), i, a[i], b[i]));
            }
        }
        None
    }
}

impl fmt::Display for MemoryImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, data) in &self.arrays {
            write!(f, "{name}:")?;
            for (i, v) in data.iter().enumerate() {
                write!(f, "{}{v}", if i == 0 { " " } else { "," })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
