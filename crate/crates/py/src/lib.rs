//! Python bindings: parse and write annotated formulas, inspect int-splits,
//! plan splits, evaluate small formulas and merge sub-problem results.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use intsplit_core::evaluator::{self, Correctness, EvalBudget};
use intsplit_core::merger::{self, ResultCode, ResultTable, ResultTuple, TimeModel};
use intsplit_core::splitter::{self, SplitMode};
use intsplit_core::{qdimacs, AnnotatedQuantifier, ParseOptions};

fn value_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn budget(max_variables: usize) -> EvalBudget {
    EvalBudget {
        max_variables,
        ..EvalBudget::default()
    }
}

fn fraction<'py>(py: Python<'py>, num: u64, den: u64) -> PyResult<Bound<'py, PyAny>> {
    py.import("fractions")?
        .getattr("Fraction")?
        .call1((num, den))
}

/// An annotated quantifier `Q(x1..xw)_{c1;...;ck}`.
#[pyclass(module = "intsplit", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Annotation {
    inner: AnnotatedQuantifier,
}

#[pymethods]
impl Annotation {
    /// `"exists"` or `"forall"`.
    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    #[getter]
    fn variables(&self) -> Vec<u32> {
        self.inner.bitvector().variables().to_vec()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn constraints(&self) -> Vec<String> {
        self.inner
            .constraints()
            .iter()
            .map(|c| c.to_string())
            .collect()
    }

    /// Number of accounted expansions.
    #[getter]
    fn s(&self) -> u64 {
        self.inner.s()
    }

    /// Number of unaccounted expansions.
    #[getter]
    fn u(&self) -> u64 {
        self.inner.u()
    }

    /// `u / s` as a `fractions.Fraction`.
    #[getter]
    fn efficiency<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let eta = self.inner.efficiency();
        fraction(py, *eta.numer(), *eta.denom())
    }

    fn accounts(&self, value: u64) -> bool {
        self.inner.accounts_value(value)
    }

    fn __repr__(&self) -> String {
        format!(
            "Annotation({} {} {})",
            self.inner.kind(),
            self.inner.bitvector(),
            self.constraints().join(";")
        )
    }
}

/// A PCNF formula with optional int-split annotations.
#[pyclass(module = "intsplit", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Formula {
    inner: intsplit_core::Formula,
}

#[pymethods]
impl Formula {
    #[staticmethod]
    #[pyo3(signature = (text, strict = false))]
    fn parse(text: &str, strict: bool) -> PyResult<Self> {
        qdimacs::parse_with(text, ParseOptions { strict })
            .map(|inner| Formula { inner })
            .map_err(value_error)
    }

    #[staticmethod]
    #[pyo3(signature = (path, strict = false))]
    fn read(path: PathBuf, strict: bool) -> PyResult<Self> {
        qdimacs::read_file(&path, ParseOptions { strict })
            .map(|inner| Formula { inner })
            .map_err(value_error)
    }

    fn write(&self) -> String {
        qdimacs::write(&self.inner)
    }

    #[getter]
    fn variable_count(&self) -> u32 {
        self.inner.variable_count()
    }

    /// `[(kind, [vars...]), ...]` with kind `"e"` or `"a"`.
    #[getter]
    fn prefix(&self) -> Vec<(String, Vec<u32>)> {
        self.inner
            .prefix()
            .iter()
            .map(|b| (b.kind().letter().to_string(), b.variables().to_vec()))
            .collect()
    }

    #[getter]
    fn clauses(&self) -> Vec<Vec<i64>> {
        self.inner
            .matrix()
            .clauses()
            .iter()
            .map(|c| c.literals().iter().map(|l| l.to_dimacs()).collect())
            .collect()
    }

    #[getter]
    fn annotations(&self) -> Vec<Annotation> {
        self.inner
            .annotations()
            .iter()
            .map(|a| Annotation { inner: a.clone() })
            .collect()
    }

    /// The same formula with every annotation relaxed to `T`.
    fn relaxed(&self) -> Self {
        Formula {
            inner: self.inner.relaxed(),
        }
    }

    #[pyo3(signature = (with_intsplits = false, max_variables = 25))]
    fn eval(&self, py: Python<'_>, with_intsplits: bool, max_variables: usize) -> PyResult<bool> {
        let f = &self.inner;
        py.detach(|| {
            if with_intsplits {
                evaluator::eval_with_intsplits(f, budget(max_variables))
            } else {
                evaluator::eval(f, budget(max_variables))
            }
        })
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// `None` if the int-splits are correct, otherwise a dict with the
    /// restricted and unrestricted truth values and the culprit annotations.
    #[pyo3(signature = (max_variables = 25))]
    fn check<'py>(
        &self,
        py: Python<'py>,
        max_variables: usize,
    ) -> PyResult<Option<Bound<'py, PyDict>>> {
        let verdict = py
            .detach(|| evaluator::check_correctness(&self.inner, budget(max_variables)))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let Correctness::Incorrect {
            restricted,
            unrestricted,
            culprits,
        } = verdict
        else {
            return Ok(None);
        };
        let out = PyDict::new(py);
        out.set_item("restricted", restricted)?;
        out.set_item("unrestricted", unrestricted)?;
        out.set_item("culprits", culprits)?;
        Ok(Some(out))
    }

    /// Split plan for `depth`; `intsplits=False` expands variables bit by bit.
    #[pyo3(signature = (depth, intsplits = true))]
    fn plan(&self, depth: usize, intsplits: bool) -> PyResult<Plan> {
        let mode = if intsplits {
            SplitMode::IntSplit
        } else {
            SplitMode::Plain
        };
        splitter::plan(&self.inner, depth, mode)
            .map(|inner| Plan {
                formula: self.inner.clone(),
                inner,
            })
            .map_err(value_error)
    }

    fn __str__(&self) -> String {
        self.write()
    }

    fn __repr__(&self) -> String {
        format!(
            "Formula(variables={}, blocks={}, clauses={}, annotations={})",
            self.inner.variable_count(),
            self.inner.prefix().len(),
            self.inner.matrix().clauses().len(),
            self.inner.annotations().len()
        )
    }

    fn __eq__(&self, other: &Formula) -> bool {
        self.inner == other.inner
    }
}

/// The quantifiers chosen for expansion and their accounted expansions.
#[pyclass(module = "intsplit", frozen)]
struct Plan {
    formula: intsplit_core::Formula,
    inner: splitter::SplitPlan,
}

#[pymethods]
impl Plan {
    #[getter]
    fn effective_depth(&self) -> usize {
        self.inner.effective_depth()
    }

    /// Sub-problems with int-splits.
    #[getter]
    fn count(&self) -> u64 {
        self.inner.count_subproblems()
    }

    /// Sub-problems when every planned variable is expanded bit by bit.
    #[getter]
    fn full_count(&self) -> u64 {
        self.inner.full_expansion_count()
    }

    #[getter]
    fn quantifiers(&self) -> Vec<Annotation> {
        self.inner
            .quantifiers()
            .iter()
            .map(|q| Annotation {
                inner: q.quantifier.clone(),
            })
            .collect()
    }

    /// `{var: bit}` of sub-problem `index`.
    fn assignment(&self, index: u64) -> PyResult<BTreeMap<u32, bool>> {
        self.inner
            .expansion(index)
            .map(|e| e.bits.into_iter().collect())
            .ok_or_else(|| value_error(format!("index {index} out of range")))
    }

    fn assignments(&self) -> Vec<BTreeMap<u32, bool>> {
        splitter::enumerate_accounted(&self.inner)
            .map(|e| e.bits.into_iter().collect())
            .collect()
    }

    fn subproblem(&self, index: u64) -> PyResult<Formula> {
        let e = self
            .inner
            .expansion(index)
            .ok_or_else(|| value_error(format!("index {index} out of range")))?;
        splitter::build_subproblem(&self.formula, &self.inner, &e)
            .map(|inner| Formula { inner })
            .map_err(value_error)
    }

    /// Writes sub-problem files and the manifest; returns the file paths.
    #[pyo3(signature = (directory, name, force = false))]
    fn write(&self, directory: PathBuf, name: &str, force: bool) -> PyResult<Vec<PathBuf>> {
        splitter::split_to_directory(&self.formula, &self.inner, name, &directory, force)
            .map(|s| s.files)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Merges `[(code, seconds), ...]` in index order. Codes are `"TRUE"`,
    /// `"FALSE"` or `"UNKNOWN"` (or solver exit codes). Returns
    /// `(code, virtual parallel time)`.
    #[pyo3(signature = (results, time_model = "paper"))]
    fn merge(&self, results: Vec<(String, f64)>, time_model: &str) -> PyResult<(String, f64)> {
        let model: TimeModel = time_model.parse().map_err(value_error)?;
        let rows = results
            .into_iter()
            .enumerate()
            .map(|(i, (code, time))| {
                let code: ResultCode = code.parse().map_err(value_error)?;
                Ok((i as u64, ResultTuple::new(code, time)))
            })
            .collect::<PyResult<Vec<_>>>()?;
        let table = ResultTable::new(self.inner.clone(), rows).map_err(value_error)?;
        let merged = merger::merge(&table, model).map_err(value_error)?;
        Ok((merged.result.code.to_string(), merged.result.time))
    }

    fn __len__(&self) -> usize {
        self.inner.count_subproblems() as usize
    }

    fn __repr__(&self) -> String {
        format!(
            "Plan(depth={}, count={}, full_count={})",
            self.inner.effective_depth(),
            self.inner.count_subproblems(),
            self.inner.full_expansion_count()
        )
    }
}

/// Unsigned value of a bit list, most significant bit first.
#[pyfunction]
fn integer_value(bits: Vec<bool>) -> PyResult<u64> {
    intsplit_core::integer_value(&bits).map_err(value_error)
}

#[pymodule]
fn intsplit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Formula>()?;
    m.add_class::<Annotation>()?;
    m.add_class::<Plan>()?;
    m.add_function(wrap_pyfunction!(integer_value, m)?)?;
    Ok(())
}
