//! Command-line frontend: bound evaluation, measurement compilation,
//! circuit simulation, the full sweep, and angle-table regeneration.
//!
//! Exit codes: 0 on success, 1 on a validation/usage problem, 2 on an
//! internal failure. Angles are printed in degrees, family angles accepted
//! in radians. `UNCERTAINTY_LAB_SEED` overrides a config file's seed; an
//! explicit `--seed` flag wins over both.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use crate::compiler::{
    angle_tables, c_family_measurement, c_opt_measurement, c_qubit_measurement, d_measurement,
    d_measurement_exact, d_qubit_measurement, jx2_measurement, jx_measurement, jy2_measurement,
    jy_measurement, jy_measurement_exact, jz_measurement, sigma_sq_measurement,
    sigma_x_measurement, sigma_y_measurement, sigma_z_measurement, AngleSolution,
    CertificationScope, CompiledMeasurement, TableRow,
};
use crate::experiment::{export_dataset, run_sweep, ExportFormat, RunConfig};
use crate::optics::{
    detect, encode_with, simulate, simulate_trace, Circuit, Encoding,
};
use crate::qmath::{QState, C64};
use crate::relations::{
    evaluate_bounds, standard_pair, OrthogonalSpec,
};

/// Environment variable that overrides the sweep seed (beaten by `--seed`).
pub const SEED_ENV_VAR: &str = "UNCERTAINTY_LAB_SEED";

#[derive(Debug)]
enum CliError {
    Validation(String),
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Internal(m) => m,
        }
    }
}

fn validation(err: impl std::fmt::Display) -> CliError {
    CliError::Validation(err.to_string())
}

fn internal(err: impl std::fmt::Display) -> CliError {
    CliError::Internal(err.to_string())
}

#[derive(Parser, Debug)]
#[command(
    name = "uncertainty-lab",
    version,
    about = "Sum-form uncertainty bounds, wave-plate measurement compilation and counting-statistics sweeps for qubits and qutrits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TableFormatArg {
    Text,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate both sum-form bounds and the product-form quantities at one
    /// family angle.
    Bounds {
        /// System dimension (2 or 3).
        #[arg(long, default_value_t = 3)]
        dim: usize,
        /// Family angle in radians.
        #[arg(long)]
        phi: f64,
        /// Orthogonal-state choices: opt, 1, 2, 3, or a JSON amplitude
        /// array such as [0,1,0] or [[0,0],[1,0],[0,0]]. Repeatable;
        /// defaults to every published choice for the dimension.
        #[arg(long = "orthogonal")]
        orthogonal: Vec<String>,
    },
    /// Compile a named measurement into plate angles.
    Compile {
        /// Jx | Jx2 | Jy | Jy2 | Jz | C+ | C- | D | Jy_exact | D_exact, or
        /// sigma_x | sigma_y | sigma_z | sigma_x2 | sigma_y2 with --dim 2.
        #[arg(long)]
        observable: String,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        /// Family angle in radians (witness rows that depend on it).
        #[arg(long)]
        phi: Option<f64>,
        /// Orthogonal-state choice for C rows: opt (default), 1, 2 or 3.
        #[arg(long, default_value = "opt")]
        orthogonal: String,
        /// Also write the compiled circuit (JSON element list) to a file.
        #[arg(long)]
        emit_circuit: Option<PathBuf>,
    },
    /// Simulate a circuit (JSON element list) on a logical input state.
    Simulate {
        /// Path to the circuit JSON (array of elements).
        #[arg(long)]
        circuit: PathBuf,
        /// Path to the input state JSON: {"dim": 3, "amplitudes": [...]}.
        #[arg(long)]
        input: PathBuf,
        /// Print the state after every element.
        #[arg(long)]
        trace: bool,
    },
    /// Run the sweep and write the dataset.
    Sweep {
        /// JSON config file; defaults apply for missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        /// Seed override (wins over the config file and the environment).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Regenerate the preparation and measurement angle tables.
    Tables {
        #[arg(long, value_enum, default_value_t = TableFormatArg::Text)]
        format: TableFormatArg,
    },
}

/// Parses argv and dispatches; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(output) => {
            print!("{output}");
            0
        }
        Err(err) => {
            eprintln!("error: {}", err.message());
            err.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Bounds {
            dim,
            phi,
            orthogonal,
        } => bounds_command(dim, phi, &orthogonal),
        Command::Compile {
            observable,
            dim,
            phi,
            orthogonal,
            emit_circuit,
        } => compile_command(&observable, dim, phi, &orthogonal, emit_circuit.as_deref()),
        Command::Simulate {
            circuit,
            input,
            trace,
        } => simulate_command(&circuit, &input, trace),
        Command::Sweep {
            config,
            out,
            format,
            seed,
        } => sweep_command(config.as_deref(), &out, format, seed),
        Command::Tables { format } => tables_command(format),
    }
}

fn parse_orthogonal_spec(text: &str, dim: usize) -> Result<OrthogonalSpec, CliError> {
    match text {
        "opt" => Ok(OrthogonalSpec::Optimal),
        "1" | "2" | "3" => {
            if dim != 3 {
                return Err(CliError::Validation(
                    "the published orthogonal family exists for dimension 3 only".into(),
                ));
            }
            Ok(OrthogonalSpec::Family(text.parse().expect("checked digits")))
        }
        custom if custom.trim_start().starts_with('[') => {
            let state = parse_state_json(custom, dim)?;
            Ok(OrthogonalSpec::Custom(state))
        }
        other => Err(CliError::Validation(format!(
            "unknown orthogonal choice '{other}' (expected opt, 1, 2, 3 or a JSON array)"
        ))),
    }
}

fn parse_amplitudes(values: &[serde_json::Value]) -> Result<Vec<C64>, CliError> {
    values
        .iter()
        .map(|value| match value {
            serde_json::Value::Number(n) => Ok(C64::new(
                n.as_f64().ok_or_else(|| {
                    CliError::Validation("non-finite amplitude".into())
                })?,
                0.0,
            )),
            serde_json::Value::Array(pair) if pair.len() == 2 => {
                let component = |v: &serde_json::Value| {
                    v.as_f64()
                        .ok_or_else(|| CliError::Validation("non-numeric amplitude".into()))
                };
                Ok(C64::new(component(&pair[0])?, component(&pair[1])?))
            }
            other => Err(CliError::Validation(format!(
                "amplitude must be a number or [re, im], got {other}"
            ))),
        })
        .collect()
}

fn parse_state_json(text: &str, expected_dim: usize) -> Result<QState, CliError> {
    let values: Vec<serde_json::Value> = serde_json::from_str(text).map_err(validation)?;
    let amplitudes = parse_amplitudes(&values)?;
    if amplitudes.len() != expected_dim {
        return Err(CliError::Validation(format!(
            "state has {} amplitudes, expected {expected_dim}",
            amplitudes.len()
        )));
    }
    QState::new(amplitudes).map_err(validation)
}

fn bounds_command(dim: usize, phi: f64, orthogonal: &[String]) -> Result<String, CliError> {
    if !phi.is_finite() {
        return Err(CliError::Validation("phi must be finite".into()));
    }
    let pair = standard_pair(dim).map_err(validation)?;
    let specs: Vec<OrthogonalSpec> = if orthogonal.is_empty() {
        if dim == 3 {
            vec![
                OrthogonalSpec::Optimal,
                OrthogonalSpec::Family(1),
                OrthogonalSpec::Family(2),
                OrthogonalSpec::Family(3),
            ]
        } else {
            vec![OrthogonalSpec::Optimal]
        }
    } else {
        orthogonal
            .iter()
            .map(|text| parse_orthogonal_spec(text, dim))
            .collect::<Result<_, _>>()?
    };
    let report = evaluate_bounds(&pair, phi, &specs).map_err(validation)?;

    let mut out = String::new();
    out.push_str(&format!("pair        {}\n", pair.label()));
    out.push_str(&format!("phi         {phi:.10}\n"));
    out.push_str(&format!("lhs_sum     {:.10}\n", report.lhs_sum));
    out.push_str(&format!("hr_product  {:.10}\n", report.hr_product));
    out.push_str(&format!("hr_bound    {:.10}\n", report.hr_bound));
    for entry in &report.mp1 {
        out.push_str(&format!(
            "mp1[{:<6}] {:.10}  (sign {})\n",
            entry.origin.tag(),
            entry.bound,
            if entry.sign < 0 { "-" } else { "+" },
        ));
    }
    out.push_str(&format!("mp2         {:.10}\n", report.mp2));
    Ok(out)
}

fn compile_named(
    observable: &str,
    dim: usize,
    phi: Option<f64>,
    orthogonal: &str,
) -> Result<CompiledMeasurement, CliError> {
    let need_phi = || {
        phi.ok_or_else(|| {
            CliError::Validation(format!("--phi is required for observable {observable}"))
        })
    };
    let family_k = |text: &str| -> Result<u8, CliError> {
        match text {
            "1" | "2" | "3" => Ok(text.parse().expect("checked digits")),
            other => Err(CliError::Validation(format!(
                "--orthogonal for C rows must be opt, 1, 2 or 3 (got '{other}')"
            ))),
        }
    };
    let compiled = match (dim, observable) {
        (3, "Jx") => jx_measurement(),
        (3, "Jx2") | (3, "Jx^2") => jx2_measurement(),
        (3, "Jy") => jy_measurement(),
        (3, "Jy_exact") => jy_measurement_exact(),
        (3, "Jy2") | (3, "Jy^2") => jy2_measurement(),
        (3, "Jz") => jz_measurement(),
        (3, "C+") | (3, "C-") => {
            let sign = if observable == "C+" { 1 } else { -1 };
            if orthogonal == "opt" {
                c_opt_measurement(sign)
            } else {
                c_family_measurement(need_phi()?, family_k(orthogonal)?, sign)
            }
        }
        (3, "D") => d_measurement(),
        (3, "D_exact") => d_measurement_exact(),
        (2, "sigma_x") => sigma_x_measurement(),
        (2, "sigma_y") => sigma_y_measurement(),
        (2, "sigma_z") => sigma_z_measurement(),
        (2, "sigma_x2") | (2, "sigma_y2") => sigma_sq_measurement(),
        (2, "C+") | (2, "C-") => {
            let sign = if observable == "C+" { 1 } else { -1 };
            c_qubit_measurement(need_phi()?, sign)
        }
        (2, "D") => d_qubit_measurement(need_phi()?),
        _ => {
            return Err(CliError::Validation(format!(
                "unknown observable '{observable}' for dimension {dim}"
            )))
        }
    };
    compiled.map_err(internal)
}

fn scope_tag(scope: CertificationScope) -> &'static str {
    match scope {
        CertificationScope::AllInputs => "all-inputs",
        CertificationScope::FamilyOnly => "family",
        CertificationScope::StateOnly => "defining-state",
    }
}

fn format_solution(label: &str, solution: &AngleSolution) -> String {
    let mut out = String::new();
    out.push_str(&format!("observable: {label}\n"));
    let plates: [(&str, Option<f64>); 9] = [
        ("Q1", solution.q1),
        ("H2", solution.h2),
        ("H3", solution.h3),
        ("H4", solution.h4),
        ("Q4", solution.q4),
        ("H5", solution.h5),
        ("Q5", solution.q5),
        ("H6", solution.h6),
        ("H7", solution.h7),
    ];
    for (name, angle) in plates {
        if let Some(angle) = angle {
            out.push_str(&format!("  {name}  {angle:>8.2}\n"));
        }
    }
    for (rail, theta) in &solution.pre_qwps {
        out.push_str(&format!("  pre-QWP(rail {rail})  {theta:>8.2}\n"));
    }
    out.push_str(&format!("residual: {:.2e}\n", solution.residual));
    out.push_str(&format!("scope: {}\n", scope_tag(solution.scope)));
    if let Some(note) = &solution.note {
        out.push_str(&format!("note: {note}\n"));
    }
    out
}

fn compile_command(
    observable: &str,
    dim: usize,
    phi: Option<f64>,
    orthogonal: &str,
    emit_circuit: Option<&Path>,
) -> Result<String, CliError> {
    let compiled = compile_named(observable, dim, phi, orthogonal)?;
    if let Some(path) = emit_circuit {
        let json = compiled.circuit.to_json().map_err(internal)?;
        std::fs::write(path, json).map_err(validation)?;
    }
    Ok(format_solution(
        &compiled.setting.label,
        &compiled.solution,
    ))
}

#[derive(serde::Deserialize)]
struct StateFile {
    dim: usize,
    amplitudes: Vec<serde_json::Value>,
}

fn simulate_command(circuit_path: &Path, input_path: &Path, trace: bool) -> Result<String, CliError> {
    let circuit_json = std::fs::read_to_string(circuit_path).map_err(validation)?;
    let input_json = std::fs::read_to_string(input_path).map_err(validation)?;
    let state_file: StateFile = serde_json::from_str(&input_json).map_err(validation)?;
    let encoding = match state_file.dim {
        3 => Encoding::Qutrit,
        2 => Encoding::Qubit,
        other => {
            return Err(CliError::Validation(format!(
                "input dim must be 2 or 3, got {other}"
            )))
        }
    };
    let amplitudes = parse_amplitudes(&state_file.amplitudes)?;
    if amplitudes.len() != state_file.dim {
        return Err(CliError::Validation(format!(
            "input lists {} amplitudes for dim {}",
            amplitudes.len(),
            state_file.dim
        )));
    }
    let psi = QState::new(amplitudes).map_err(validation)?;
    let circuit = Circuit::from_json(&circuit_json, encoding).map_err(validation)?;
    let input = encode_with(&psi, encoding).map_err(validation)?;

    let mut out = String::new();
    if trace {
        let steps = simulate_trace(&circuit, &input);
        out.push_str(&format!("step 0 (input): {}\n", steps[0]));
        for (i, (state, element)) in steps[1..].iter().zip(&circuit.elements).enumerate() {
            out.push_str(&format!("step {} ({element:?}): {state}\n", i + 1));
        }
    }
    let final_state = simulate(&circuit, &input);
    let det = detect(&final_state, encoding);
    for (i, p) in det.probabilities.iter().enumerate() {
        out.push_str(&format!("p{i}      {p:.10}\n"));
    }
    out.push_str(&format!("leakage {:.10}\n", det.leakage));
    Ok(out)
}

fn sweep_command(
    config_path: Option<&Path>,
    out_path: &Path,
    format: FormatArg,
    seed_flag: Option<u64>,
) -> Result<String, CliError> {
    let mut config: RunConfig = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(validation)?;
            serde_json::from_str(&text).map_err(validation)?
        }
        None => RunConfig::default(),
    };
    if let Ok(value) = std::env::var(SEED_ENV_VAR) {
        config.seed = value.parse().map_err(|_| {
            CliError::Validation(format!("{SEED_ENV_VAR} must be an unsigned integer"))
        })?;
    }
    if let Some(seed) = seed_flag {
        config.seed = seed;
    }
    config.validate().map_err(validation)?;

    let rows = run_sweep(&config).map_err(internal)?;
    let format = match format {
        FormatArg::Csv => ExportFormat::Csv,
        FormatArg::Json => ExportFormat::Json,
    };
    export_dataset(&rows, format, out_path).map_err(internal)?;
    Ok(format!(
        "wrote {} rows to {} (dim {}, shots {}, seed {})\n",
        rows.len(),
        out_path.display(),
        config.dim,
        config.shots,
        config.seed
    ))
}

fn angle_cell(angle: Option<f64>) -> String {
    match angle {
        Some(angle) => format!("{angle:.2}"),
        None => "-".to_string(),
    }
}

fn table_rows_text(rows: &[TableRow], columns: &[&str]) -> String {
    let mut out = String::new();
    let mut header = format!("{:<24}", "observable");
    for column in columns {
        header.push_str(&format!("{column:>9}"));
    }
    header.push_str(&format!("{:>11}{:>16}", "residual", "scope"));
    out.push_str(&header);
    out.push('\n');
    for row in rows {
        let s = &row.compiled.solution;
        let cells: Vec<Option<f64>> = columns
            .iter()
            .map(|&column| match column {
                "Q1" => s.q1,
                "H2" => s.h2,
                "H3" => s.h3,
                "H4" => s.h4,
                "Q4" => s.q4,
                "H5" => s.h5,
                "Q5" => s.q5,
                "H6" => s.h6,
                "H7" => s.h7,
                _ => None,
            })
            .collect();
        let mut line = format!("{:<24}", row.observable);
        for cell in cells {
            line.push_str(&format!("{:>9}", angle_cell(cell)));
        }
        line.push_str(&format!(
            "{:>11}{:>16}",
            format!("{:.1e}", s.residual),
            scope_tag(s.scope)
        ));
        out.push_str(&line);
        out.push('\n');
        if let Some(note) = &s.note {
            out.push_str(&format!("    note: {note}\n"));
        }
    }
    out
}

fn tables_command(format: TableFormatArg) -> Result<String, CliError> {
    let tables = angle_tables().map_err(internal)?;
    let qutrit_columns = ["H2", "H3", "H4", "Q4", "H5", "Q5", "H6", "H7"];
    let qubit_columns = ["Q1", "H2"];
    match format {
        TableFormatArg::Text => {
            let mut out = String::new();
            out.push_str("Preparation plate H1 (degrees):\n");
            for (j, (phi, theta)) in tables.preparation.iter().enumerate() {
                out.push_str(&format!(
                    "  phi = {:>2}pi/12 ({phi:.4} rad): H1 = {theta:>7.2}\n",
                    j + 1
                ));
            }
            out.push('\n');
            out.push_str("Qutrit measurement settings (degrees):\n");
            out.push_str(&table_rows_text(&tables.qutrit, &qutrit_columns));
            out.push('\n');
            out.push_str("Qubit measurement settings (degrees):\n");
            out.push_str(&table_rows_text(&tables.qubit, &qubit_columns));
            Ok(out)
        }
        TableFormatArg::Csv => {
            let mut out = String::new();
            out.push_str("table,observable,Q1,H2,H3,H4,Q4,H5,Q5,H6,H7,residual,scope\n");
            for (j, (_, theta)) in tables.preparation.iter().enumerate() {
                out.push_str(&format!(
                    "preparation,H1(phi={}pi/12),,{theta:.2},,,,,,,,,\n",
                    j + 1
                ));
            }
            let emit = |out: &mut String, table: &str, rows: &[TableRow]| {
                for row in rows {
                    let s = &row.compiled.solution;
                    let cell = |angle: Option<f64>| {
                        angle.map(|a| format!("{a:.2}")).unwrap_or_default()
                    };
                    out.push_str(&format!(
                        "{table},{},{},{},{},{},{},{},{},{},{},{:.1e},{}\n",
                        row.observable,
                        cell(s.q1),
                        cell(s.h2),
                        cell(s.h3),
                        cell(s.h4),
                        cell(s.q4),
                        cell(s.h5),
                        cell(s.q5),
                        cell(s.h6),
                        cell(s.h7),
                        s.residual,
                        scope_tag(s.scope),
                    ));
                }
            };
            emit(&mut out, "qutrit", &tables.qutrit);
            emit(&mut out, "qubit", &tables.qubit);
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_spec_parsing() {
        assert!(matches!(
            parse_orthogonal_spec("opt", 3),
            Ok(OrthogonalSpec::Optimal)
        ));
        assert!(matches!(
            parse_orthogonal_spec("2", 3),
            Ok(OrthogonalSpec::Family(2))
        ));
        assert!(parse_orthogonal_spec("2", 2).is_err());
        assert!(matches!(
            parse_orthogonal_spec("[0,1,0]", 3),
            Ok(OrthogonalSpec::Custom(_))
        ));
        assert!(parse_orthogonal_spec("nope", 3).is_err());
    }

    #[test]
    fn bounds_output_contains_expected_values() {
        let out = bounds_command(3, std::f64::consts::PI / 12.0, &[]).unwrap();
        assert!(out.contains("lhs_sum     1.0000000000"));
        assert!(out.contains("hr_product  0.1875000000"));
        assert!(out.contains("mp2         0.5000000000"));
        assert!(out.contains("mp1[opt   ] 1.0000000000"));
    }

    #[test]
    fn compile_command_prints_published_angles() {
        let out = compile_command("Jx", 3, None, "opt", None).unwrap();
        assert!(out.contains("H3    -17.63"));
        assert!(out.contains("H4     75.00"));
        assert!(out.contains("H7    -62.63"));
        assert!(out.contains("scope: all-inputs"));

        let out = compile_command("D", 3, None, "opt", None).unwrap();
        assert!(out.contains("Q4     45.00"));
        assert!(out.contains("H7    -90.00"));

        assert!(compile_command("Jq", 3, None, "opt", None).is_err());
        assert!(compile_command("D", 2, None, "opt", None).is_err()); // needs phi
    }

    #[test]
    fn custom_orthogonal_must_be_orthogonal() {
        // (0,1,0) is orthogonal to every family state; a family state is not.
        let ok = bounds_command(3, 0.4, &["[0,1,0]".to_string()]);
        assert!(ok.is_ok());
        let bad = bounds_command(3, 0.4, &["[1,0,0]".to_string()]);
        assert!(bad.is_err());
    }
}
