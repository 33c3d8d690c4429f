use pyo3::prelude::*;

#[pymodule]
fn review_aspects_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
