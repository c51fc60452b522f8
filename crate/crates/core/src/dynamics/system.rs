use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::library::{join_exponents, SparseModel, TermLibrary};

/// Ground-truth polynomial dynamics `dx/dt = θ · φ(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicalSystem {
    pub name: String,
    pub description: String,
    model: SparseModel,
}

impl DynamicalSystem {
    pub fn new(name: impl Into<String>, description: impl Into<String>, model: SparseModel) -> Self {
        DynamicalSystem { name: name.into(), description: description.into(), model }
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn m(&self) -> usize {
        self.model.m()
    }

    pub fn library(&self) -> &TermLibrary {
        self.model.library()
    }

    pub fn theta_true(&self) -> &Array2<f64> {
        self.model.theta()
    }

    pub fn model(&self) -> &SparseModel {
        &self.model
    }

    /// Parses the system config format:
    ///
    /// ```text
    /// name = lotka_volterra
    /// n = 2
    /// m = 0
    /// M = 2
    /// # row  exponents  coefficient
    /// 0  1,0  1.0
    /// 0  1 1  -0.5
    /// ```
    ///
    /// Exponents cover the state variables then the inputs, either comma
    /// joined or whitespace separated. `#` starts a comment.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut keys: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut terms: Vec<(usize, Vec<&str>)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                if !terms.is_empty() {
                    return Err(Error::parse(line_no, Some(key.trim()), "header keys must precede the term table"));
                }
                let key = key.trim().to_owned();
                if keys.insert(key.clone(), (line_no, value.trim().to_owned())).is_some() {
                    return Err(Error::parse(line_no, Some(&key), "duplicate key"));
                }
            } else {
                terms.push((line_no, line.split_whitespace().collect()));
            }
        }

        let header_line = terms.first().map(|t| t.0).unwrap_or(text.lines().count() + 1);
        let get = |key: &str| -> Result<&(usize, String)> {
            keys.get(key).ok_or_else(|| Error::parse(header_line, Some(key), "missing required key"))
        };
        let count = |key: &str| -> Result<usize> {
            let (line, v) = get(key)?;
            v.parse().map_err(|_| Error::parse(*line, Some(key), format!("expected a non-negative integer, got `{v}`")))
        };
        let name = get("name")?.1.clone();
        if name.is_empty() {
            return Err(Error::parse(get("name")?.0, Some("name"), "empty system name"));
        }
        let description = keys.get("description").map(|(_, v)| v.clone()).unwrap_or_default();
        let n = count("n")?;
        let m = count("m")?;
        let order = count("M")? as u32;
        if n == 0 {
            return Err(Error::parse(get("n")?.0, Some("n"), "state dimension must be at least 1"));
        }
        let library = TermLibrary::build(n, m, order)?;
        let vars = n + m;
        let mut theta = Array2::zeros((n, library.len()));
        let mut seen = std::collections::BTreeSet::new();

        for (line, tokens) in terms {
            if tokens.len() < 3 {
                return Err(Error::parse(line, None, "term line needs `row exponents coefficient`"));
            }
            let row: usize = tokens[0]
                .parse()
                .map_err(|_| Error::parse(line, Some("row_index"), format!("bad row index `{}`", tokens[0])))?;
            if row >= n {
                return Err(Error::parse(line, Some("row_index"), format!("row {row} out of range for n={n}")));
            }
            let exp_tokens: Vec<&str> = tokens[1..tokens.len() - 1].iter().flat_map(|t| t.split(',')).collect();
            if exp_tokens.len() != vars {
                return Err(Error::parse(
                    line,
                    Some("exponent_vector"),
                    format!("expected {vars} exponents, got {}", exp_tokens.len()),
                ));
            }
            let exponents = exp_tokens
                .iter()
                .map(|t| t.parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(line, Some("exponent_vector"), "exponents must be non-negative integers"))?;
            let coef_tok = tokens[tokens.len() - 1];
            let coef: f64 = coef_tok
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::parse(line, Some("coefficient"), format!("bad coefficient `{coef_tok}`")))?;
            let col = library.index_of(&exponents).ok_or_else(|| {
                Error::parse(line, Some("exponent_vector"), format!("term degree exceeds library order {order}"))
            })?;
            if !seen.insert((row, col)) {
                return Err(Error::parse(line, None, "duplicate term"));
            }
            theta[(row, col)] = coef;
        }

        let model = SparseModel::new(library, theta)?;
        Ok(DynamicalSystem { name, description, model })
    }

    pub fn from_config_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_config_str(&text)
    }

    pub fn to_config_string(&self) -> String {
        let lib = self.library();
        let mut out = format!("name = {}\n", self.name);
        if !self.description.is_empty() {
            out.push_str(&format!("description = {}\n", self.description));
        }
        out.push_str(&format!("n = {}\nm = {}\nM = {}\n# row  exponents  coefficient\n", self.n(), self.m(), lib.order()));
        for &(r, c) in self.model.support() {
            out.push_str(&format!(
                "{r}  {}  {}\n",
                join_exponents(&lib.terms()[c].exponents),
                self.model.theta()[(r, c)]
            ));
        }
        out
    }
}

const LOTKA_VOLTERRA: &str = include_str!("../../systems/lotka_volterra.sys");
const LORENZ: &str = include_str!("../../systems/lorenz.sys");

/// Named collection of systems. Starts with the shipped benchmarks; more
/// (e.g. aircraft or epidemic models) can be loaded from config files.
#[derive(Debug, Clone, Default)]
pub struct SystemRegistry {
    systems: BTreeMap<String, DynamicalSystem>,
}

impl SystemRegistry {
    pub fn builtin() -> Self {
        let mut reg = SystemRegistry::default();
        for text in [LOTKA_VOLTERRA, LORENZ] {
            reg.insert(DynamicalSystem::from_config_str(text).expect("shipped system configs parse"));
        }
        reg
    }

    pub fn insert(&mut self, system: DynamicalSystem) {
        self.systems.insert(system.name.clone(), system);
    }

    /// Loads a config file and registers it under its `name` key.
    pub fn load_file(&mut self, path: &Path) -> Result<&DynamicalSystem> {
        let sys = DynamicalSystem::from_config_file(path)?;
        let name = sys.name.clone();
        self.insert(sys);
        Ok(&self.systems[&name])
    }

    pub fn get(&self, name: &str) -> Result<&DynamicalSystem> {
        self.systems.get(name).ok_or_else(|| Error::NotFound(name.to_owned()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.systems.keys().map(String::as_str)
    }
}

/// Registry with the shipped benchmark systems.
pub fn builtin_systems() -> SystemRegistry {
    SystemRegistry::builtin()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_lookup() {
        let reg = builtin_systems();
        let lorenz = reg.get("lorenz").unwrap();
        assert_eq!(lorenz.n(), 3);
        assert_eq!(lorenz.m(), 0);
        assert_eq!(lorenz.library().order(), 2);
        assert_eq!(lorenz.model().p(), 7);
        let lv = reg.get("lotka_volterra").unwrap();
        assert_eq!(lv.n(), 2);
        assert_eq!(lv.model().p(), 4);
        assert!(matches!(reg.get("missing_name"), Err(Error::NotFound(_))));
        assert!(reg.get("f8_crusader").is_err());
    }

    #[test]
    fn lorenz_parameters() {
        let reg = builtin_systems();
        let lorenz = reg.get("lorenz").unwrap();
        let f = lorenz.model().rhs(&[1.0, 2.0, 3.0], &[]);
        let (s, r, b) = (10.0, 28.0, 8.0 / 3.0);
        assert_eq!(f, vec![s * (2.0 - 1.0), 1.0 * (r - 3.0) - 2.0, 1.0 * 2.0 - b * 3.0]);
    }

    #[test]
    fn config_round_trip() {
        let reg = builtin_systems();
        let lv = reg.get("lotka_volterra").unwrap();
        let again = DynamicalSystem::from_config_str(&lv.to_config_string()).unwrap();
        assert_eq!(&again, lv);
    }

    #[test]
    fn input_driven_config() {
        let text = "name = forced\nn = 1\nm = 1\nM = 1\n0 1 0 -0.5\n0 0 1 2.0\n";
        let sys = DynamicalSystem::from_config_str(text).unwrap();
        assert_eq!(sys.m(), 1);
        assert_eq!(sys.model().rhs(&[2.0], &[1.0]), vec![-1.0 + 2.0]);
    }

    #[test]
    fn parse_errors_carry_context() {
        let cases = [
            ("name = x\nn = 2\nm = 0\nM = 2\n0  1,0\n", 5, None),
            ("name = x\nn = 2\nm = 0\nM = 2\n2  1,0  1.0\n", 5, Some("row_index")),
            ("name = x\nn = 2\nm = 0\nM = 1\n0  1,1  1.0\n", 5, Some("exponent_vector")),
            ("name = x\nn = 2\nm = 0\nM = 2\n0  1,0,0  1.0\n", 5, Some("exponent_vector")),
            ("name = x\nn = two\nm = 0\nM = 2\n", 2, Some("n")),
            ("name = x\nn = 1\nm = 0\nM = 2\n0  1  abc\n", 5, Some("coefficient")),
            ("name = x\nm = 0\nM = 2\n0  1  1\n", 4, Some("n")),
        ];
        for (text, want_line, want_field) in cases {
            match DynamicalSystem::from_config_str(text) {
                Err(Error::Parse { line, field, .. }) => {
                    assert_eq!(line, want_line, "{text}");
                    assert_eq!(field.as_deref(), want_field, "{text}");
                }
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }
}
