use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassInfo {
    pub name: String,
    pub superclass: u32,
}

/// Two-tier label hierarchy. Class ids are `0..class_count` and superclass
/// ids `0..superclass_count`; both are dense.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassHierarchy {
    classes: Vec<ClassInfo>,
    superclasses: Vec<String>,
}

impl ClassHierarchy {
    /// Builds a hierarchy from `(class_id, class_name, superclass_id)` rows
    /// and `(superclass_id, superclass_name)` rows.
    pub fn new(
        classes: impl IntoIterator<Item = (u32, String, u32)>,
        superclasses: impl IntoIterator<Item = (u32, String)>,
    ) -> Result<Self> {
        let mut super_names: BTreeMap<u32, String> = BTreeMap::new();
        for (id, name) in superclasses {
            if let Some(prev) = super_names.insert(id, name.clone()) {
                if prev != name {
                    return Err(Error::Validation(format!(
                        "superclass {id} has conflicting names {prev:?} and {name:?}"
                    )));
                }
            }
        }
        let mut class_map: BTreeMap<u32, ClassInfo> = BTreeMap::new();
        for (id, name, superclass) in classes {
            if class_map
                .insert(id, ClassInfo { name, superclass })
                .is_some()
            {
                return Err(Error::Validation(format!("class {id} listed twice")));
            }
        }
        if class_map.is_empty() {
            return Err(Error::Validation("hierarchy has no classes".into()));
        }
        for (expected, id) in class_map.keys().enumerate() {
            if *id as usize != expected {
                return Err(Error::Validation(format!(
                    "class ids must be dense from 0; missing class {expected}"
                )));
            }
        }
        for (expected, id) in super_names.keys().enumerate() {
            if *id as usize != expected {
                return Err(Error::Validation(format!(
                    "superclass ids must be dense from 0; missing superclass {expected}"
                )));
            }
        }
        let superclasses: Vec<String> = super_names.into_values().collect();
        let classes: Vec<ClassInfo> = class_map.into_values().collect();
        let mut members = vec![0usize; superclasses.len()];
        for (id, c) in classes.iter().enumerate() {
            match members.get_mut(c.superclass as usize) {
                Some(n) => *n += 1,
                None => {
                    return Err(Error::Reference(format!(
                        "class {id} maps to undefined superclass {}",
                        c.superclass
                    )))
                }
            }
        }
        if let Some(empty) = members.iter().position(|&n| n == 0) {
            return Err(Error::Validation(format!(
                "superclass {empty} ({}) has no member classes",
                superclasses[empty]
            )));
        }
        Ok(Self {
            classes,
            superclasses,
        })
    }

    /// Parses `class_id<TAB>class_name<TAB>superclass_id<TAB>superclass_name` lines.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut classes = Vec::new();
        let mut supers = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let parse_err = |reason: String| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                reason,
            };
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(parse_err(format!(
                    "expected 4 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let class_id: u32 = fields[0]
                .parse()
                .map_err(|_| parse_err(format!("bad class id {:?}", fields[0])))?;
            let super_id: u32 = fields[2]
                .parse()
                .map_err(|_| parse_err(format!("bad superclass id {:?}", fields[2])))?;
            classes.push((class_id, fields[1].to_string(), super_id));
            supers.push((super_id, fields[3].to_string()));
        }
        Self::new(classes, supers)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, c) in self.classes.iter().enumerate() {
            let _ = writeln!(
                out,
                "{id}\t{}\t{}\t{}",
                c.name, c.superclass, self.superclasses[c.superclass as usize]
            );
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn superclass_count(&self) -> usize {
        self.superclasses.len()
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn superclass_names(&self) -> &[String] {
        &self.superclasses
    }

    pub fn class_name(&self, class_id: u32) -> &str {
        &self.classes[class_id as usize].name
    }

    pub fn superclass_name(&self, superclass_id: u32) -> &str {
        &self.superclasses[superclass_id as usize]
    }

    pub fn superclass_of(&self, class_id: u32) -> u32 {
        self.classes[class_id as usize].superclass
    }

    pub fn contains_class(&self, class_id: u32) -> bool {
        (class_id as usize) < self.classes.len()
    }

    /// Member class ids of a superclass, ascending.
    pub fn members(&self, superclass_id: u32) -> Vec<u32> {
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| c.superclass == superclass_id)
            .map(|(id, _)| id as u32)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "0\tcar\t0\tvehicles\n1\ttruck\t0\tvehicles\n2\tsparrow\t1\tbirds\n";

    #[test]
    fn parses_and_round_trips() {
        let h = ClassHierarchy::parse(TEXT, Path::new("h.tsv")).unwrap();
        assert_eq!(h.class_count(), 3);
        assert_eq!(h.superclass_count(), 2);
        assert_eq!(h.superclass_of(1), 0);
        assert_eq!(h.members(0), vec![0, 1]);
        assert_eq!(h.to_text(), TEXT);
    }

    #[test]
    fn rejects_sparse_ids() {
        let err = ClassHierarchy::parse("0\ta\t0\tA\n2\tb\t0\tA\n", Path::new("h")).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn rejects_conflicting_superclass_names() {
        let err = ClassHierarchy::parse("0\ta\t0\tA\n1\tb\t0\tB\n", Path::new("h")).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn rejects_memberless_superclass() {
        let err = ClassHierarchy::new(
            vec![(0, "a".to_string(), 0)],
            vec![(0, "A".to_string()), (1, "B".to_string())],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn malformed_line_reports_position() {
        let err = ClassHierarchy::parse("0\ta\t0\tA\n1\tb\n", Path::new("h")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
