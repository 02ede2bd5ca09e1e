from pipeline.commands import single_stage

Command = single_stage('write_fit', 'fit', 'Fit the lognormal fragility curve by maximum likelihood (fragility.json)')
