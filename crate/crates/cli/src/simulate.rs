use crate::args::{Preset, SimulateArgs};
use crate::layout::{self, Manifest, Scenario};
use crate::{CliError, CliResult};
use psbp_core::graph::SpatialGraph;
use psbp_core::simgen::{gen_study1, gen_study2, quadrant_labels, ClusterSpecs};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Write every replicate of every scenario; zero replicates writes nothing.
pub fn run(args: &SimulateArgs) -> CliResult<()> {
    if args.replicates == 0 {
        return Ok(());
    }
    let graph = SpatialGraph::from_spec(&args.graph)?;
    let scenarios = match args.preset {
        Preset::Study1 => vec![Scenario { name: "study1".into(), lambda: None, inv_phi: None }],
        Preset::Study2 => {
            if args.lambda.is_empty() || args.inv_phi.is_empty() {
                return Err(CliError::usage("study2 needs at least one --lambda and --inv-phi value"));
            }
            let mut s = Vec::new();
            for &l in &args.lambda {
                for &p in &args.inv_phi {
                    s.push(Scenario::study2(l, p));
                }
            }
            s
        }
    };
    let study1 = match args.preset {
        Preset::Study1 => {
            let (rows, cols) = grid_dims(&args.graph)?;
            let specs = match &args.clusters {
                Some(p) => ClusterSpecs::read(p)?,
                None => ClusterSpecs::study1(),
            };
            Some((quadrant_labels(rows, cols), specs))
        }
        Preset::Study2 => None,
    };

    layout::create_dir(&args.out)?;
    std::fs::write(args.out.join(layout::GRAPH), graph.to_edge_list_string())?;
    for sc in &scenarios {
        for r in 0..args.replicates {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(r as u64));
            let (data, truth) = match &study1 {
                Some((labels, specs)) => gen_study1(labels, specs, &mut rng)?,
                None => gen_study2(&graph, sc.lambda.unwrap_or(0.0), sc.inv_phi.unwrap_or(0.0), &mut rng)?,
            };
            let dir = layout::replicate_dir(&args.out, &sc.name, r);
            layout::create_dir(&dir)?;
            data.write_path(dir.join(layout::DATA))?;
            truth.write_path(dir.join(layout::TRUTH))?;
        }
    }
    Manifest { preset: args.preset.name().into(), seed: args.seed, replicates: args.replicates, scenarios }.write(&args.out)
}

fn grid_dims(spec: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::usage(format!("study1 needs a grid graph 'grid:ROWSxCOLS', got '{spec}'"));
    let dims = spec.strip_prefix("grid:").ok_or_else(bad)?;
    let (r, c) = dims.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}
