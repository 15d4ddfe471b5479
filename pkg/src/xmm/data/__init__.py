from .schema import (
    OUT_OF_VOCAB,
    STRUCTURAL_TYPES,
    AnswerVocab,
    ParseError,
    QuestionRecord,
    RegionSet,
    StructuralType,
    build_answer_vocab,
    load_regions,
    load_xgqa,
    save_questions,
    save_regions,
)
from .splits import (
    FEW_SHOT_SIZES,
    REFERENCE_SPLIT_IMAGES,
    REFERENCE_SPLIT_QUESTIONS,
    SplitError,
    SplitPlan,
    l1_distance,
    make_few_shot_splits,
    split_question_counts,
    type_distribution,
)
from .synth import (
    DEFAULT_INVENTORY,
    SOURCE_LANGUAGE,
    Cipher,
    GenerationError,
    Inventory,
    SceneGraph,
    SceneObject,
    cipher_translate,
    describe_scene,
    generate_corpus,
    generate_questions,
    generate_scene,
    make_cipher,
    source_lexicon,
)
