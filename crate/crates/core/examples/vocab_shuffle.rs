//! Builds a frequency-ranked vocabulary from a tiny corpus, shuffles its ids
//! and shows how the permutation changes coarse labels.
//!
//! cargo run --example vocab_shuffle -- [label_size] [seed]

use anyhow::Result;
use colactc::{CoarseMapper, MappingKind, Vocabulary};

const CORPUS: &str = "\
the cat sat on the mat
the dog sat on the log
a cat and a dog met on the mat
the log was on the mat";

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let label_size: usize = args.next().map_or(Ok(4), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(7), |s| s.parse())?;

    let sentences: Vec<Vec<&str>> = CORPUS.lines().map(|l| l.split_whitespace().collect()).collect();
    let vocab = Vocabulary::build_from_corpus(&sentences)?;
    println!("{} types, most frequent first: {:?}", vocab.len(), vocab.tokens());

    let perm = vocab.shuffle_ids(seed);
    let plain = CoarseMapper::new(MappingKind::Division, vocab.len(), label_size)?;
    let shuffled = plain.clone().with_permutation(perm.clone())?;
    println!("permutation {:?}", perm.as_slice());

    let ids = vocab.encode(&sentences[2]).expect("token from the corpus");
    println!("sentence  {:?}", sentences[2]);
    println!("ids       {ids:?}");
    let div: Vec<usize> = ids.iter().map(|&z| plain.map_fixed(z)).collect::<Result<_, _>>()?;
    let mixed: Vec<usize> = ids.iter().map(|&z| shuffled.map_fixed(z)).collect::<Result<_, _>>()?;
    println!("div       {div:?}");
    println!("shuf+div  {mixed:?}");
    println!(
        "label histogram div {:?}, shuffled {:?}",
        plain.label_histogram()?,
        shuffled.label_histogram()?
    );
    Ok(())
}
