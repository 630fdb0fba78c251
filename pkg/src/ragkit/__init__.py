"""Weakly supervised dense retrieval for retrieval-augmented QA.

Pipeline: lexical first-stage retrieval -> answer-likelihood reranking
into weak labels -> bi-encoder and late-interaction retriever training
-> retrieval and end-to-end QA evaluation.
"""

from .bm25 import BM25Index, BM25Params, build_index
from .data import (
    DataFormatError,
    DatasetSplit,
    Passage,
    QAPair,
    Qrels,
    RankedList,
    load_corpus,
    load_qa_pairs,
    load_qrels,
    read_run_file,
    save_corpus,
    save_qa_pairs,
    save_qrels,
    split_qa,
    write_run_file,
)
from .encoder import (
    AdamHyper,
    AdamState,
    EncoderGrads,
    EncoderParams,
    TrainingConfig,
    adam_step,
    embed_mean_pooled,
    embed_tokens,
    finite_diff_check,
    init_params,
)
from .lateinteraction import (
    TokenEmbeddingStore,
    build_token_store,
    maxsim_score,
    pairwise_loss_and_grads,
    pairwise_loss_from_scores,
    search_maxsim,
    train_late_interaction,
)
from .llm import (
    AnswerLikelihoodScorer,
    CompletionClient,
    ContainmentScorer,
    EndpointConfig,
    MockLLMClient,
    PromptTemplate,
    ScoreOrdering,
    TransportError,
    build_qa_prompt,
    build_score_prompt,
    mock_containment_score,
)
from .metrics import (
    MetricReport,
    bleu_1,
    evaluate_qa,
    mrr_at_k,
    paired_t_test,
    recall_at_k,
    rouge_l,
    token_f1,
)
from .qa import QAConfig, answer_question, run_qa_batch
from .synthetic import SyntheticDataset, make_synthetic_dataset
from .tokenize import tokenize
from .twotower import (
    EmbeddingMatrix,
    TwoTowerModel,
    cosine_score,
    encode_corpus,
    mnr_loss_and_grads,
    search,
    search_text,
    train_two_tower,
)
from .weaklabel import (
    WeakLabelRecord,
    WeakLabelSet,
    build_weak_labels,
    evaluate_weak_labels,
    extract_triplets,
    extract_two_tower_pairs,
    rerank_candidates,
)

__version__ = "0.1.0"
