use jptdp::conllu::{Sentence, Token};

pub fn three_token_sentence() -> Sentence {
    Sentence::from_tokens(vec![
        Token::new(1, "Dogs").with_annotation("NOUN", 2, "nsubj"),
        Token::new(2, "bark").with_annotation("VERB", 0, "root"),
        Token::new(3, "loudly").with_annotation("ADV", 2, "advmod"),
    ])
}
