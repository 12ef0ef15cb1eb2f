use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2};

use crate::corpus::Dataset;
use crate::encoders::{Cg3dModel, Modality};
use crate::{Error, Result};

/// Unit-norm embeddings of `indices` (in that order) through one modality's
/// pathway.
pub fn embed_records(
    data: &Dataset,
    indices: &[usize],
    model: &Cg3dModel<f32>,
    modality: Modality,
    use_prompts: bool,
) -> Result<Array2<f32>> {
    match modality {
        Modality::Point => model.embed_clouds(&indices.iter().map(|&i| data.cloud(i).clone()).collect::<Vec<_>>()),
        Modality::Image => model.embed_images(
            &indices.iter().map(|&i| data.image(i).clone()).collect::<Vec<_>>(),
            use_prompts,
        ),
        Modality::Text => {
            let seqs: Vec<_> = indices.iter().map(|&i| data.tokens(i).clone()).collect();
            let mut out = Array2::zeros((seqs.len(), model.config.embed_dim));
            for (k, chunk) in seqs.chunks(64).enumerate() {
                let e = model.forward_texts(chunk)?.emb;
                out.slice_mut(s![k * 64..k * 64 + chunk.len(), ..]).assign(&e);
            }
            Ok(out)
        }
    }
}

/// CSV with columns `id, class, modality, e0 … e{d−1}`, rows ordered by id
/// and then by the order of `modalities`. Images use the prompted pathway
/// when `use_prompts` is set.
pub fn embeddings_csv(
    data: &Dataset,
    indices: &[usize],
    model: &Cg3dModel<f32>,
    modalities: &[Modality],
    use_prompts: bool,
) -> Result<String> {
    let mut order = indices.to_vec();
    order.sort_by(|&a, &b| data.id(a).cmp(data.id(b)));
    let tables = modalities
        .iter()
        .map(|&m| Ok((m, embed_records(data, &order, model, m, use_prompts)?)))
        .collect::<Result<Vec<_>>>()?;
    let d = model.config.embed_dim;
    let mut out = String::from("id,class,modality");
    for j in 0..d {
        let _ = write!(out, ",e{j}");
    }
    out.push('\n');
    for (row, &i) in order.iter().enumerate() {
        let class = &data.manifest.classes()[data.label(i)];
        for (m, e) in &tables {
            let _ = write!(out, "{},{},{}", data.id(i), class, m.as_str());
            for v in e.row(row) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn export_embeddings(
    data: &Dataset,
    indices: &[usize],
    model: &Cg3dModel<f32>,
    modalities: &[Modality],
    use_prompts: bool,
    out_path: &Path,
) -> Result<usize> {
    let csv = embeddings_csv(data, indices, model, modalities, use_prompts)?;
    fs::write(out_path, &csv).map_err(|e| Error::io(out_path, e))?;
    Ok(indices.len() * modalities.len())
}
