use spidernet::arch::{build_spidernet, DropoutSchedule, Network};
use spidernet::data::{stratified_split, synth_generate, Scaler, SplitFractions, SplitMode, SynthConfig};
use spidernet::metrics::auc_roc;
use spidernet::train::{eval_scores, train, TrainConfig, TrainData};

fn main() -> spidernet::Result<()> {
    for seed in [42u64, 7, 11, 13, 21] {
        let synth = SynthConfig {
            n_entities: 500,
            records_per_entity: (8, 12),
            fraud_fraction: 0.02,
            n_features: 32,
            n_shifted_features: 8,
            shift_magnitude: 0.0,
            seed,
            ..SynthConfig::default()
        };
        let dataset = synth_generate(&synth)?;
        let splits = stratified_split(&dataset, SplitFractions::default(), seed, SplitMode::EntityCoherent)?;
        let scaler = Scaler::fit(&dataset, &splits.train);
        let spec = build_spidernet(6, 10, 3, 100, DropoutSchedule::default(), dataset.n_features())?;
        let mut net = Network::new(spec, seed)?;
        let config = TrainConfig {
            max_epochs: 8,
            patience: 3,
            seed,
            ..TrainConfig::default()
        };
        let data = TrainData {
            dataset: &dataset,
            scaler: &scaler,
            train_rows: &splits.train,
            validation_rows: &splits.validation,
        };
        let _ = train(&mut net, &data, &config)?;
        let scores = eval_scores(&net, &dataset, &scaler, &splits.test)?;
        let labels: Vec<u8> = splits.test.iter().map(|&r| dataset.labels[r]).collect();
        let roc = auc_roc(&scores, &labels)?;
        let npos = labels.iter().filter(|&&l| l == 1).count();
        println!("seed {}: test AUC-ROC {:.4} ({} pos / {} rows)", seed, roc, npos, labels.len());
    }
    Ok(())
}
