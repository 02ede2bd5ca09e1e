from pipeline.commands import single_stage

Command = single_stage('write_loo', 'loo', 'Leave-one-disaster-out validation over LOO_DATASETS (loo.csv)')
