use std::path::PathBuf;

use clap::Subcommand;
use hitl_gan::data::{pca_fit, Dataset, PcaModel};
use hitl_gan::rundir::{read_json, write_json};

use crate::{csv_writer, Outcome};

#[derive(Subcommand)]
pub enum PcaCommand {
    /// Fit a model to a CSV with a `class` column.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 2)]
        components: usize,
        /// Model JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Project feature rows to standardized coordinates `y1..yk`.
    Transform {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Map standardized rows (e.g. a run's `after.csv`) back to feature space.
    Inverse {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_rows(
    out: Option<&PathBuf>,
    names: &[String],
    rows: &[Vec<f64>],
    data: &Dataset,
) -> anyhow::Result<()> {
    let mut w = csv_writer(out)?;
    let mut header = names.to_vec();
    header.push("class".into());
    w.write_record(&header)?;
    for (row, c) in rows.iter().zip(&data.labels) {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(data.class_names[c.index()].clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cmd: PcaCommand) -> anyhow::Result<Outcome> {
    match cmd {
        PcaCommand::Fit { data, components, out } => {
            let ds = Dataset::from_csv_path(&data)?;
            let model = pca_fit(&ds.rows, components)?;
            write_json(&out, &model)?;
            eprintln!("explained variance {:?}", model.explained_variance);
        }
        PcaCommand::Transform { model, data, out } => {
            let model: PcaModel = read_json(&model)?;
            let ds = Dataset::from_csv_path(&data)?;
            let rows = ds.rows.iter().map(|r| model.transform(r)).collect::<Result<Vec<_>, _>>()?;
            let names: Vec<String> = (1..=model.k()).map(|i| format!("y{i}")).collect();
            write_rows(out.as_ref(), &names, &rows, &ds)?;
        }
        PcaCommand::Inverse { model, data, out } => {
            let model: PcaModel = read_json(&model)?;
            let ds = Dataset::from_csv_path(&data)?;
            let rows = ds.rows.iter().map(|r| model.inverse_transform(r)).collect::<Result<Vec<_>, _>>()?;
            let names: Vec<String> = (1..=model.input_dim()).map(|i| format!("f{i}")).collect();
            write_rows(out.as_ref(), &names, &rows, &ds)?;
        }
    }
    Ok(Outcome::Done)
}
